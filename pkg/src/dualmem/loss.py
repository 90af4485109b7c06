"""Training objective: confidence-weighted pointmap regression plus pose terms.

All pointmap and translation errors are divided by a per-clip scale ``s``
(mean distance of valid ground-truth world points to the origin), so the
total loss is invariant to the metric scale of the scene.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import geometry
from . import tensor as T
from .errors import DegenerateInputError, ShapeError
from .tensor import Tensor

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class GroundTruthFrame:
    """Per-frame supervision (numpy arrays, world frame = first camera)."""

    points_global: np.ndarray
    points_self: np.ndarray
    valid: np.ndarray
    quat: np.ndarray
    trans: np.ndarray
    intrinsics: np.ndarray
    dynamic: Optional[np.ndarray] = None


@dataclass(frozen=True)
class LossParts:
    conf: Tensor
    abspose: Tensor
    relpose: Tensor
    total: Tensor

    def scalars(self) -> dict:
        return {
            "L_conf": self.conf.item(),
            "L_abspose": self.abspose.item(),
            "L_relpose": self.relpose.item(),
            "total": self.total.item(),
        }


def scale_factor(frames: Sequence[GroundTruthFrame]) -> float:
    """Mean norm of all valid ground-truth world points across ``frames``, floored at 1e-6.

    Raises :class:`DegenerateInputError` only when no point is valid.
    """
    norms = [np.linalg.norm(f.points_global[f.valid], axis=-1) for f in frames]
    norms = np.concatenate(norms) if norms else np.empty(0)
    if norms.size == 0:
        raise DegenerateInputError("no valid ground-truth points to compute the scale factor")
    return max(float(norms.mean()), 1e-6)


def _reduce(total: Tensor, count: int, reduction: str) -> Tensor:
    if reduction == "sum" or count == 0:
        return total
    return T.scale(total, 1.0 / count)


def confidence_regression_loss(
    points: Sequence[Tensor],
    confidences: Sequence[Tensor],
    targets: Sequence[np.ndarray],
    masks: Sequence[np.ndarray],
    s: float,
    alpha: float = 0.2,
    reduction: str = "mean",
) -> Tensor:
    """Sum over maps of ``c * ||x_hat/s - x/s|| - alpha * log c`` on valid pixels.

    With ``reduction="mean"`` the sum is divided by the total number of valid
    pixels across every map.
    """
    total: Tensor = T.zeros(())
    count = 0
    for x_hat, c, x, m in zip(points, confidences, targets, masks):
        if x_hat.shape != np.shape(x) or c.shape != np.shape(m) or x_hat.shape[:2] != c.shape:
            raise ShapeError(f"pointmap {x_hat.shape} / confidence {c.shape} / target {np.shape(x)} mismatch")
        m = np.asarray(m, dtype=bool)
        err = T.norm(T.scale(x_hat - np.asarray(x), 1.0 / s), axis=-1)
        term = c * err - T.scale(T.log(c), alpha)
        total = total + T.tsum(term * m.astype(np.float64))
        count += int(m.sum())
    return _reduce(total, count, reduction)


def absolute_pose_loss(
    quats: Sequence[Tensor],
    trans: Sequence[Tensor],
    intrinsics: Sequence[Tensor],
    frames: Sequence[GroundTruthFrame],
    s: float,
    beta: float = 0.1,
    reduction: str = "mean",
) -> Tensor:
    """``||q_hat - q|| + ||tau_hat/s - tau/s|| + beta ||K_hat - K||_F`` per frame.

    The predicted quaternion is compared on the hemisphere of the ground truth.
    """
    total: Tensor = T.zeros(())
    for q_hat, t_hat, k_hat, gt in zip(quats, trans, intrinsics, frames):
        q_gt = geometry.canonical_quat(gt.quat)
        q_al = q_hat * geometry.hemisphere_sign(q_hat, q_gt)
        term = T.norm(q_al - q_gt, axis=0)
        term = term + T.norm(T.scale(t_hat - np.asarray(gt.trans), 1.0 / s), axis=0)
        term = term + T.scale(T.norm(T.reshape(k_hat - np.asarray(gt.intrinsics), (9,)), axis=0), beta)
        total = total + term
    return _reduce(total, len(frames), reduction)


def relative_pose_loss(
    quats: Sequence[Tensor],
    trans: Sequence[Tensor],
    frames: Sequence[GroundTruthFrame],
    s: float,
    reduction: str = "mean",
) -> Tensor:
    """Consecutive-pair relative pose error; zero (with a warning) for clips shorter than 2."""
    if len(frames) < 2:
        logger.warning("relative pose loss needs >= 2 frames, got %d; contributing 0", len(frames))
        return T.zeros(())
    total: Tensor = T.zeros(())
    for t in range(1, len(frames)):
        q_rel, t_rel = geometry.relative_pose(quats[t - 1], trans[t - 1], quats[t], trans[t])
        g0, g1 = frames[t - 1], frames[t]
        q_rel_gt, t_rel_gt = geometry.relative_pose_np(g0.quat, g0.trans, g1.quat, g1.trans)
        q_al = q_rel * geometry.hemisphere_sign(q_rel, q_rel_gt)
        term = T.norm(q_al - q_rel_gt, axis=0) + T.norm(T.scale(t_rel - t_rel_gt, 1.0 / s), axis=0)
        total = total + term
    return _reduce(total, len(frames) - 1, reduction)


def total_loss(
    conf: Tensor,
    abspose: Tensor,
    relpose: Tensor,
    weights: Sequence[float] = (1.0, 0.1, 0.1),
) -> LossParts:
    w1, w2, w3 = weights
    total = T.scale(conf, w1) + T.scale(abspose, w2) + T.scale(relpose, w3)
    return LossParts(conf, abspose, relpose, total)


def sequence_loss(
    predictions: Sequence,
    frames: Sequence[GroundTruthFrame],
    alpha: float = 0.2,
    beta: float = 0.1,
    weights: Sequence[float] = (1.0, 0.1, 0.1),
    reduction: str = "mean",
) -> LossParts:
    """Full objective for one streamed clip of ``FramePrediction`` objects."""
    if len(predictions) != len(frames):
        raise ShapeError(f"{len(predictions)} predictions for {len(frames)} ground-truth frames")
    s = scale_factor(frames)
    points, confs, targets, masks = [], [], [], []
    for p, g in zip(predictions, frames):
        points += [p.points_global, p.points_self]
        confs += [p.conf_global, p.conf_self]
        targets += [g.points_global, g.points_self]
        masks += [g.valid, g.valid]
    conf = confidence_regression_loss(points, confs, targets, masks, s, alpha, reduction)
    quats = [p.quat for p in predictions]
    trans = [p.trans for p in predictions]
    ks = [p.intrinsics for p in predictions]
    abspose = absolute_pose_loss(quats, trans, ks, frames, s, beta, reduction)
    relpose = relative_pose_loss(quats, trans, frames, s, reduction)
    return total_loss(conf, abspose, relpose, weights)
