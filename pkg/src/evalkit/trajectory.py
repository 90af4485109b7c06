"""Trajectory alignment and pose error metrics.

Poses are world->camera ``(q, tau)`` with scalar-last quaternions. Absolute
error compares camera centres after an optional similarity alignment;
relative error compares camera-to-world motions over a fixed frame gap.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy.spatial.transform import Rotation

from dualmem.errors import DegenerateInputError, InputError


@dataclass(frozen=True)
class Sim3:
    scale: float
    rotation: np.ndarray
    translation: np.ndarray

    def apply(self, points: np.ndarray) -> np.ndarray:
        return self.scale * np.asarray(points) @ self.rotation.T + self.translation

    def inverse(self) -> "Sim3":
        r_inv = self.rotation.T
        return Sim3(1.0 / self.scale, r_inv, -(r_inv @ self.translation) / self.scale)

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.scale * self.rotation
        m[:3, 3] = self.translation
        return m

    @classmethod
    def identity(cls) -> "Sim3":
        return cls(1.0, np.eye(3), np.zeros(3))


@dataclass(frozen=True)
class Trajectory:
    quats: np.ndarray
    trans: np.ndarray
    timestamps: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        q = np.asarray(self.quats, dtype=np.float64).reshape(-1, 4)
        t = np.asarray(self.trans, dtype=np.float64).reshape(-1, 3)
        if len(q) != len(t):
            raise InputError(f"{len(q)} rotations but {len(t)} translations")
        norms = np.linalg.norm(q, axis=1)
        if np.any(norms < 1e-12):
            raise InputError("trajectory contains a zero quaternion")
        object.__setattr__(self, "quats", q / norms[:, None])
        object.__setattr__(self, "trans", t)
        ts = np.arange(len(q), dtype=np.float64) if self.timestamps is None else np.asarray(self.timestamps, dtype=np.float64)
        object.__setattr__(self, "timestamps", ts)

    def __len__(self) -> int:
        return len(self.quats)

    def rotations(self) -> np.ndarray:
        return Rotation.from_quat(self.quats).as_matrix()

    def centres(self) -> np.ndarray:
        r = self.rotations()
        return -np.einsum("nji,nj->ni", r, self.trans)

    def cam_to_world(self) -> np.ndarray:
        r = self.rotations()
        m = np.tile(np.eye(4), (len(self), 1, 1))
        m[:, :3, :3] = np.transpose(r, (0, 2, 1))
        m[:, :3, 3] = self.centres()
        return m

    def subsample(self, stride: int) -> "Trajectory":
        if stride < 1:
            raise InputError(f"keyframe stride must be >= 1, got {stride}")
        return Trajectory(self.quats[::stride], self.trans[::stride], self.timestamps[::stride])

    @classmethod
    def from_cam_to_world(cls, mats: np.ndarray) -> "Trajectory":
        mats = np.asarray(mats, dtype=np.float64)
        r_wc = np.transpose(mats[:, :3, :3], (0, 2, 1))
        trans = -np.einsum("nij,nj->ni", r_wc, mats[:, :3, 3])
        return cls(Rotation.from_matrix(r_wc).as_quat(), trans)


def umeyama_sim3(pred: np.ndarray, gt: np.ndarray) -> Sim3:
    """Least-squares similarity with ``s R pred_i + t ~= gt_i``."""
    p = np.asarray(pred, dtype=np.float64).reshape(-1, 3)
    g = np.asarray(gt, dtype=np.float64).reshape(-1, 3)
    if p.shape != g.shape:
        raise InputError(f"alignment needs matching point sets, got {p.shape} and {g.shape}")
    if len(p) < 3:
        raise DegenerateInputError(f"alignment needs >= 3 point pairs, got {len(p)}")
    mu_p, mu_g = p.mean(axis=0), g.mean(axis=0)
    pc, gc = p - mu_p, g - mu_g
    sv = np.linalg.svd(pc, compute_uv=False)
    if sv[0] < 1e-12 or sv[1] < 1e-9 * sv[0]:
        raise DegenerateInputError("alignment points are collinear or coincident")
    cov = gc.T @ pc / len(p)
    u, d, vt = np.linalg.svd(cov)
    fix = np.eye(3)
    if np.linalg.det(u) * np.linalg.det(vt) < 0.0:
        fix[2, 2] = -1.0
    rot = u @ fix @ vt
    var_p = (pc**2).sum() / len(p)
    scale = float(np.trace(np.diag(d) @ fix) / var_p)
    return Sim3(scale, rot, mu_g - scale * rot @ mu_p)


def alignment_residual(sim: Sim3, pred: np.ndarray, gt: np.ndarray) -> float:
    return float(((sim.apply(pred) - gt) ** 2).sum())


def ate(pred: Trajectory, gt: Trajectory, align: bool = True) -> float:
    """RMSE of camera-centre error, after similarity alignment when ``align``."""
    if len(pred) != len(gt):
        raise InputError(f"trajectories differ in length: {len(pred)} vs {len(gt)}")
    p, g = pred.centres(), gt.centres()
    if align:
        p = umeyama_sim3(p, g).apply(p)
    return float(np.sqrt(np.mean(np.sum((p - g) ** 2, axis=1))))


def _geodesic_deg(r: np.ndarray) -> np.ndarray:
    cos = np.clip((np.trace(r, axis1=-2, axis2=-1) - 1.0) / 2.0, -1.0, 1.0)
    return np.degrees(np.arccos(cos))


def rpe(pred: Trajectory, gt: Trajectory, delta: int = 1, scale: float = 1.0) -> Tuple[float, float]:
    """``(translation RMSE, rotation RMSE in degrees)`` over frame pairs ``delta`` apart.

    ``scale`` multiplies the predicted translations first (e.g. the scale of a
    similarity alignment).
    """
    if len(pred) != len(gt):
        raise InputError(f"trajectories differ in length: {len(pred)} vs {len(gt)}")
    if delta < 1:
        raise InputError(f"RPE gap must be >= 1, got {delta}")
    if len(pred) <= delta:
        return 0.0, 0.0
    pm, gm = pred.cam_to_world(), gt.cam_to_world()
    pm[:, :3, 3] *= scale
    rel_p = np.linalg.inv(pm[:-delta]) @ pm[delta:]
    rel_g = np.linalg.inv(gm[:-delta]) @ gm[delta:]
    err = np.linalg.inv(rel_g) @ rel_p
    t_err = np.linalg.norm(err[:, :3, 3], axis=1)
    r_err = _geodesic_deg(err[:, :3, :3])
    return float(np.sqrt(np.mean(t_err**2))), float(np.sqrt(np.mean(r_err**2)))
