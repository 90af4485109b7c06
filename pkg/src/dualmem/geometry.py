"""Camera geometry: quaternions, poses and pinhole intrinsics.

Conventions used across the project:

* quaternions are scalar-last ``(x, y, z, w)`` and canonicalized to ``w >= 0``;
* a pose ``(q, tau)`` maps world points into the camera: ``X_cam = R(q) X + tau``;
* the camera looks down +z with x right and y down, principal point at the
  image centre, square pixels.
"""

from __future__ import annotations

import math
from typing import Tuple

import numpy as np
from scipy.spatial.transform import Rotation

from . import tensor as T
from .errors import InputError
from .tensor import Tensor

IDENTITY_QUAT = np.array([0.0, 0.0, 0.0, 1.0])


# ----------------------------
# numpy helpers
# ----------------------------

def canonical_quat(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    n = np.linalg.norm(q, axis=-1, keepdims=True)
    if np.any(n < 1e-12):
        raise InputError("zero-norm quaternion")
    q = q / n
    return np.where(q[..., 3:4] < 0.0, -q, q)


def quat_to_matrix_np(q: np.ndarray) -> np.ndarray:
    return Rotation.from_quat(canonical_quat(q)).as_matrix()


def matrix_to_quat_np(r: np.ndarray) -> np.ndarray:
    return canonical_quat(Rotation.from_matrix(r).as_quat())


def pose_matrix(q: np.ndarray, tau: np.ndarray) -> np.ndarray:
    m = np.eye(4)
    m[:3, :3] = quat_to_matrix_np(q)
    m[:3, 3] = np.asarray(tau, dtype=np.float64)
    return m


def camera_center(q: np.ndarray, tau: np.ndarray) -> np.ndarray:
    """World-frame optical centre ``-R^T tau`` of a world->camera pose."""
    r = quat_to_matrix_np(q)
    return -r.T @ np.asarray(tau, dtype=np.float64)


def relative_pose_np(q_prev, tau_prev, q_cur, tau_cur) -> Tuple[np.ndarray, np.ndarray]:
    """Pose of ``prev``-camera coordinates in the ``cur`` camera."""
    r_prev, r_cur = quat_to_matrix_np(q_prev), quat_to_matrix_np(q_cur)
    r_rel = r_cur @ r_prev.T
    return matrix_to_quat_np(r_rel), np.asarray(tau_cur) - r_rel @ np.asarray(tau_prev)


def focal_from_fov(fov_y: float, height: int) -> float:
    return height / (2.0 * math.tan(fov_y / 2.0))


def intrinsics_np(fov_y: float, height: int, width: int) -> np.ndarray:
    f = focal_from_fov(fov_y, height)
    return np.array([[f, 0.0, width / 2.0], [0.0, f, height / 2.0], [0.0, 0.0, 1.0]])


def transform_points(points: np.ndarray, rotation: np.ndarray, translation: np.ndarray) -> np.ndarray:
    return np.asarray(points) @ np.asarray(rotation).T + np.asarray(translation)


def unproject_depth(depth: np.ndarray, k: np.ndarray) -> np.ndarray:
    """Depth map ``[H, W]`` -> camera-frame points ``[H, W, 3]`` (pixel centres)."""
    h, w = depth.shape
    ys, xs = np.meshgrid(np.arange(h) + 0.5, np.arange(w) + 0.5, indexing="ij")
    x = (xs - k[0, 2]) / k[0, 0] * depth
    y = (ys - k[1, 2]) / k[1, 1] * depth
    return np.stack([x, y, depth], axis=-1)


# ----------------------------
# Differentiable helpers (Tensor in, Tensor out)
# ----------------------------

def _parts(q: Tensor):
    return [T.getitem(q, i) for i in range(4)]


def quat_multiply(a: Tensor, b: Tensor) -> Tensor:
    """Hamilton product ``a * b`` for scalar-last quaternions."""
    ax, ay, az, aw = _parts(T.as_tensor(a))
    bx, by, bz, bw = _parts(T.as_tensor(b))
    return T.stack(
        [
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
            aw * bw - ax * bx - ay * by - az * bz,
        ]
    )


def quat_conjugate(q: Tensor) -> Tensor:
    return T.as_tensor(q) * np.array([-1.0, -1.0, -1.0, 1.0])


def quat_to_matrix(q: Tensor) -> Tensor:
    """Rotation matrix of a unit quaternion, ``[3, 3]``."""
    x, y, z, w = _parts(T.as_tensor(q))
    rows = [
        1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - z * w), 2.0 * (x * z + y * w),
        2.0 * (x * y + z * w), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - x * w),
        2.0 * (x * z - y * w), 2.0 * (y * z + x * w), 1.0 - 2.0 * (x * x + y * y),
    ]
    return T.reshape(T.stack(rows), (3, 3))


def hemisphere_sign(q: Tensor, reference: np.ndarray | None = None) -> float:
    """Sign that puts ``q`` on the ``w >= 0`` side, or on ``reference``'s side."""
    if reference is None:
        return -1.0 if q.data[3] < 0.0 else 1.0
    return -1.0 if float(np.dot(q.data, reference)) < 0.0 else 1.0


def relative_pose(q_prev: Tensor, tau_prev: Tensor, q_cur: Tensor, tau_cur: Tensor) -> Tuple[Tensor, Tensor]:
    """Relative world->camera motion ``cur <- prev``; quaternion canonicalized to ``w >= 0``."""
    q_rel = quat_multiply(q_cur, quat_conjugate(q_prev))
    q_rel = q_rel * hemisphere_sign(q_rel)
    r_rel = quat_to_matrix(q_rel)
    moved = T.reshape(T.matmul(r_rel, T.reshape(tau_prev, (3, 1))), (3,))
    return q_rel, tau_cur - moved


def intrinsics(fov_y: Tensor, height: int, width: int) -> Tensor:
    """Differentiable ``K`` with focal ``H / (2 tan(fov_y / 2))`` and centred principal point."""
    f = T.div(float(height), 2.0 * T.tan(T.scale(fov_y, 0.5)))
    diag = np.diag([1.0, 1.0, 0.0])
    const = np.array([[0.0, 0.0, width / 2.0], [0.0, 0.0, height / 2.0], [0.0, 0.0, 1.0]])
    return f * diag + const
