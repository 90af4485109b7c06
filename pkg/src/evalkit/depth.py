from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from dualmem.errors import InputError

ALIGNMENTS = ("scale", "scale_shift", "metric")
_ALIASES = {"per-scene": "scale", "per_scene": "scale"}
_MIN_DEPTH = 1e-6


@dataclass(frozen=True)
class DepthMetrics:
    abs_rel: float
    delta_125: float
    pixels: int

    def as_dict(self, prefix: str = "") -> dict:
        return {f"{prefix}abs_rel": self.abs_rel, f"{prefix}delta_125": self.delta_125, f"{prefix}pixels": self.pixels}


def align_depth(pred: np.ndarray, gt: np.ndarray, mode: str) -> np.ndarray:
    """Per-scene alignment of ``pred`` onto ``gt`` (both already masked, 1-D)."""
    mode = _ALIASES.get(mode, mode)
    if mode == "metric":
        return pred
    if mode == "scale":
        med = np.median(pred)
        return pred * (np.median(gt) / med) if med > _MIN_DEPTH else pred
    if mode == "scale_shift":
        a = np.stack([pred, np.ones_like(pred)], axis=1)
        (s, b), *_ = np.linalg.lstsq(a, gt, rcond=None)
        return s * pred + b
    raise InputError(f"unknown depth alignment {mode!r}; expected one of {ALIGNMENTS}")


def depth_metrics(pred: np.ndarray, gt: np.ndarray, mask: np.ndarray | None = None, mode: str = "scale") -> DepthMetrics:
    """AbsRel and the percentage of pixels with ``max(d_hat/d, d/d_hat) < 1.25``.

    Non-positive predictions are clipped to a small epsilon after alignment.
    """
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise InputError(f"depth maps differ in shape: {pred.shape} vs {gt.shape}")
    valid = gt > 0.0
    if mask is not None:
        valid &= np.asarray(mask, dtype=bool)
    if not valid.any():
        raise InputError("depth metrics need at least one valid pixel")
    p, g = pred[valid], gt[valid]
    p = np.maximum(align_depth(np.maximum(p, _MIN_DEPTH), g, mode), _MIN_DEPTH)
    abs_rel = float(np.mean(np.abs(p - g) / g))
    ratio = np.maximum(p / g, g / p)
    return DepthMetrics(abs_rel, float(100.0 * np.mean(ratio < 1.25)), int(valid.sum()))
