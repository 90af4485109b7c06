"""Prediction files and PLY point clouds.

A prediction directory holds ``cameras.json`` (per-frame quaternion,
translation, intrinsics and field of view) and ``frames/NNNNNN.dmck`` with
the global/self pointmaps and confidences.
"""

from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np
from plyfile import PlyData, PlyElement, PlyParseError

from evalkit.report import SequencePredictions

from .codec import load_container, save_container
from .decoder import FramePrediction
from .errors import InputError

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
_FIELDS = ("points_global", "conf_global", "points_self", "conf_self")


def stack_predictions(preds: Sequence[FramePrediction], fps: Optional[float] = None) -> SequencePredictions:
    if not preds:
        raise InputError("no predictions to stack")
    return SequencePredictions(
        quats=np.stack([p.quat.data for p in preds]),
        trans=np.stack([p.trans.data for p in preds]),
        points_global=np.stack([p.points_global.data for p in preds]),
        conf_global=np.stack([p.conf_global.data for p in preds]),
        points_self=np.stack([p.points_self.data for p in preds]),
        conf_self=np.stack([p.conf_self.data for p in preds]),
        intrinsics=np.stack([p.intrinsics.data for p in preds]),
        fps=fps,
    )


def write_predictions(directory: Path, preds: SequencePredictions, fov_y: Optional[np.ndarray] = None) -> Path:
    directory = Path(directory)
    (directory / "frames").mkdir(parents=True, exist_ok=True)
    cameras = []
    for i in range(len(preds)):
        save_container(directory / "frames" / f"{i:06d}.dmck", {k: getattr(preds, k)[i] for k in _FIELDS}, {"frame": i})
        cameras.append(
            {
                "index": i,
                "quat": preds.quats[i].tolist(),
                "trans": preds.trans[i].tolist(),
                "intrinsics": preds.intrinsics[i].tolist(),
                "fov_y": None if fov_y is None else float(fov_y[i]),
            }
        )
    doc = {"schema_version": SCHEMA_VERSION, "fps": preds.fps, "frames": cameras}
    (directory / "cameras.json").write_text(json.dumps(doc, indent=2))
    return directory


def read_predictions(directory: Path) -> SequencePredictions:
    directory = Path(directory)
    cam_path = directory / "cameras.json"
    if not cam_path.exists():
        raise InputError(f"{cam_path}: prediction cameras not found")
    doc = json.loads(cam_path.read_text())
    arrays = {k: [] for k in _FIELDS}
    for cam in doc["frames"]:
        frame, _ = load_container(directory / "frames" / f"{cam['index']:06d}.dmck")
        for k in _FIELDS:
            arrays[k].append(frame[k])
    return SequencePredictions(
        quats=np.array([c["quat"] for c in doc["frames"]]),
        trans=np.array([c["trans"] for c in doc["frames"]]),
        intrinsics=np.array([c["intrinsics"] for c in doc["frames"]]),
        fps=doc.get("fps"),
        **{k: np.stack(v) for k, v in arrays.items()},
    )


_PLY_VERTEX = [
    ("x", "f4"),
    ("y", "f4"),
    ("z", "f4"),
    ("confidence", "f4"),
    ("red", "u1"),
    ("green", "u1"),
    ("blue", "u1"),
]


def write_ply(path: Path, points: np.ndarray, confidence: np.ndarray, rgb: Optional[np.ndarray] = None) -> int:
    """ASCII PLY with x, y, z, confidence and 8-bit colour per vertex; returns the vertex count."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    conf = np.asarray(confidence, dtype=np.float64).reshape(-1)
    if rgb is None:
        cols = np.full((len(pts), 3), 255, dtype=np.uint8)
    else:
        cols = np.clip(np.round(np.asarray(rgb, dtype=np.float64).reshape(-1, 3) * 255.0), 0, 255).astype(np.uint8)
    if not len(pts) == len(conf) == len(cols):
        raise InputError(f"PLY columns differ in length: {len(pts)}, {len(conf)}, {len(cols)}")

    vertices = np.empty(len(pts), dtype=_PLY_VERTEX)
    vertices["x"], vertices["y"], vertices["z"] = pts[:, 0], pts[:, 1], pts[:, 2]
    vertices["confidence"] = conf
    vertices["red"], vertices["green"], vertices["blue"] = cols[:, 0], cols[:, 1], cols[:, 2]

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    PlyData([PlyElement.describe(vertices, "vertex")], text=True).write(str(path))
    return len(pts)


def read_ply_vertex_count(path: Path) -> int:
    try:
        return PlyData.read(str(path))["vertex"].count
    except KeyError:
        raise InputError(f"{path}: no vertex element in PLY") from None
    except PlyParseError as e:
        raise InputError(f"{path}: unreadable PLY: {e}") from None


def export_point_clouds(
    directory: Path,
    preds: SequencePredictions,
    images: Optional[Sequence[np.ndarray]] = None,
    conf_threshold: float = 1.0,
    per_frame: bool = False,
) -> List[Path]:
    """Fused world-frame cloud (and optionally one cloud per frame) above ``conf_threshold``."""
    directory = Path(directory)
    written = []
    fused_p, fused_c, fused_rgb = [], [], []
    for i in range(len(preds)):
        keep = preds.conf_global[i] >= conf_threshold
        p, c = preds.points_global[i][keep], preds.conf_global[i][keep]
        rgb = images[i][keep] if images is not None else None
        if per_frame:
            out = directory / f"frame_{i:06d}.ply"
            write_ply(out, p, c, rgb)
            written.append(out)
        fused_p.append(p)
        fused_c.append(c)
        fused_rgb.append(rgb if rgb is not None else np.ones_like(p))
    out = directory / "fused.ply"
    n = write_ply(out, np.concatenate(fused_p), np.concatenate(fused_c), np.concatenate(fused_rgb))
    logger.info("fused cloud: %d points -> %s", n, out)
    return [out] + written
