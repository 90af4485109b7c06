"""Per-sequence evaluation and the JSON metrics report."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Sequence

import numpy as np

from dualmem.config import EvalConfig
from dualmem.errors import DegenerateInputError, InputError
from dualmem.interfaces import Clip

from .depth import depth_metrics
from .recon import select_views, sparse_view_reconstruction
from .trajectory import Trajectory, ate, rpe, umeyama_sim3

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class SequencePredictions:
    """Stacked per-frame predictions of one streamed sequence (numpy)."""

    quats: np.ndarray
    trans: np.ndarray
    points_global: np.ndarray
    conf_global: np.ndarray
    points_self: np.ndarray
    conf_self: np.ndarray
    intrinsics: np.ndarray
    fps: Optional[float] = None

    def __len__(self) -> int:
        return len(self.quats)

    @property
    def depth(self) -> np.ndarray:
        return self.points_self[..., 2]


def evaluate_sequence(pred: SequencePredictions, gt_frames: Clip, config: EvalConfig) -> Dict[str, float]:
    """Pose, depth and sparse-view reconstruction metrics for one sequence.

    ``gt_frames`` are objects exposing ``quat, trans, depth, valid, dynamic``
    and ``points_global``.
    """
    if len(pred) != len(gt_frames):
        raise InputError(f"{len(pred)} predicted frames for {len(gt_frames)} ground-truth frames")
    out: Dict[str, float] = {"frames": float(len(pred))}

    stride = config.keyframe_stride
    traj_p = Trajectory(pred.quats, pred.trans).subsample(stride)
    traj_g = Trajectory(np.stack([f.quat for f in gt_frames]), np.stack([f.trans for f in gt_frames])).subsample(stride)
    scale = 1.0
    try:
        sim = umeyama_sim3(traj_p.centres(), traj_g.centres())
        scale = sim.scale
        out["ate"] = ate(traj_p, traj_g, align=True)
    except DegenerateInputError as exc:
        logger.warning("trajectory alignment skipped (%s); reporting unaligned ATE", exc)
        out["ate"] = ate(traj_p, traj_g, align=False)
    out["rpe_trans"], out["rpe_rot"] = rpe(traj_p, traj_g, config.rpe_delta, scale)

    depth_gt = np.stack([f.depth for f in gt_frames])
    valid = np.stack([f.valid for f in gt_frames]).astype(bool)
    dynamic = np.stack([f.dynamic for f in gt_frames]).astype(bool)
    aligned = depth_metrics(pred.depth, depth_gt, valid, config.depth_alignment)
    out.update(aligned.as_dict("depth_"))
    out.update(depth_metrics(pred.depth, depth_gt, valid, "metric").as_dict("metric_"))
    for label, sel in (("dynamic_", valid & dynamic), ("static_", valid & ~dynamic)):
        if sel.any():
            out.update(depth_metrics(pred.depth, depth_gt, sel, config.depth_alignment).as_dict(label))
        else:
            out[f"{label}abs_rel"] = float("nan")
            out[f"{label}delta_125"] = float("nan")

    if len(pred) >= config.recon_views:
        views = select_views(len(pred), config.recon_views)
        try:
            chamfer, _ = sparse_view_reconstruction(
                [pred.points_global[i] for i in views],
                [gt_frames[i].points_global for i in views],
                [valid[i] for i in views],
                [pred.conf_global[i] for i in views],
                config.conf_threshold,
            )
            out.update(chamfer.as_dict("recon_"))
        except DegenerateInputError as exc:
            logger.warning("sparse-view reconstruction skipped: %s", exc)
    if pred.fps is not None:
        out["fps"] = float(pred.fps)
    return out


def aggregate_metrics(per_sequence: Mapping[str, Mapping[str, float]]) -> Dict[str, float]:
    """Mean of every metric over the sequences where it is finite."""
    keys = sorted({k for m in per_sequence.values() for k in m})
    agg: Dict[str, float] = {}
    for k in keys:
        vals = [float(m[k]) for m in per_sequence.values() if k in m and math.isfinite(float(m[k]))]
        agg[k] = float(np.mean(vals)) if vals else float("nan")
    return agg


def build_report(per_sequence: Mapping[str, Mapping[str, float]], meta: Optional[Mapping[str, Any]] = None) -> Dict[str, Any]:
    return {
        "schema_version": SCHEMA_VERSION,
        "meta": dict(meta or {}),
        "sequences": {k: dict(v) for k, v in per_sequence.items()},
        "aggregate": aggregate_metrics(per_sequence),
    }


def _json_safe(obj):
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, (float, np.floating)):
        return float(obj) if math.isfinite(float(obj)) else None
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def write_report(report: Mapping[str, Any], path: Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_json_safe(dict(report)), indent=2, sort_keys=True))
    logger.info("metrics written to %s", path)
