"""Point-cloud accuracy / completion and the sparse-view reconstruction protocol."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.spatial import cKDTree

from dualmem.errors import DegenerateInputError, InputError

from .trajectory import Sim3, umeyama_sim3


@dataclass(frozen=True)
class ChamferMetrics:
    acc_mean: float
    acc_median: float
    comp_mean: float
    comp_median: float

    def as_dict(self, prefix: str = "") -> dict:
        return {
            f"{prefix}acc_mean": self.acc_mean,
            f"{prefix}acc_median": self.acc_median,
            f"{prefix}comp_mean": self.comp_mean,
            f"{prefix}comp_median": self.comp_median,
        }


def _nearest(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    dist, _ = cKDTree(dst).query(src, k=1)
    return dist


def chamfer_acc_comp(pred: np.ndarray, gt: np.ndarray) -> ChamferMetrics:
    """Accuracy: pred -> gt nearest distances. Completion: gt -> pred."""
    pred = np.asarray(pred, dtype=np.float64).reshape(-1, 3)
    gt = np.asarray(gt, dtype=np.float64).reshape(-1, 3)
    if len(pred) == 0 or len(gt) == 0:
        raise InputError("accuracy/completion need two non-empty point clouds")
    acc = _nearest(pred, gt)
    comp = _nearest(gt, pred)
    return ChamferMetrics(float(acc.mean()), float(np.median(acc)), float(comp.mean()), float(np.median(comp)))


def select_views(n_frames: int, n_views: int) -> np.ndarray:
    """``n_views`` evenly spread frame indices (3 to 5 views)."""
    if not 3 <= n_views <= 5:
        raise InputError(f"sparse-view protocol uses 3 to 5 views, got {n_views}")
    if n_frames < n_views:
        raise InputError(f"sequence has {n_frames} frames, fewer than {n_views} views")
    return np.unique(np.round(np.linspace(0, n_frames - 1, n_views)).astype(np.int64))


def sparse_view_reconstruction(
    pred_points: Sequence[np.ndarray],
    gt_points: Sequence[np.ndarray],
    masks: Sequence[np.ndarray],
    confidences: Optional[Sequence[np.ndarray]] = None,
    conf_threshold: float = 0.0,
    max_pairs: int = 20000,
) -> tuple[ChamferMetrics, Sim3]:
    """Align predicted world pointmaps to ground truth by pixel correspondences, then score.

    Pixels below ``conf_threshold`` are dropped from the predicted cloud but
    still used for alignment.
    """
    if not pred_points:
        raise InputError("no views given")
    p_all, g_all, keep = [], [], []
    for i, (p, g, m) in enumerate(zip(pred_points, gt_points, masks)):
        m = np.asarray(m, dtype=bool)
        p_all.append(np.asarray(p)[m])
        g_all.append(np.asarray(g)[m])
        k = np.ones(int(m.sum()), dtype=bool)
        if confidences is not None:
            k = np.asarray(confidences[i])[m] >= conf_threshold
        keep.append(k)
    p_cat, g_cat, k_cat = np.concatenate(p_all), np.concatenate(g_all), np.concatenate(keep)
    if len(p_cat) < 3:
        raise DegenerateInputError("fewer than 3 valid correspondences across views")
    stride = max(1, len(p_cat) // max_pairs)
    sim = umeyama_sim3(p_cat[::stride], g_cat[::stride])
    aligned = sim.apply(p_cat[k_cat]) if k_cat.any() else sim.apply(p_cat)
    return chamfer_acc_comp(aligned, g_cat), sim
