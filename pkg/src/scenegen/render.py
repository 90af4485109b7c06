"""Analytic ray casting of a :class:`SceneSpec` with exact per-pixel ground truth."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

from dualmem.errors import InputError
from dualmem.geometry import intrinsics_np, matrix_to_quat_np

from .scene import Box, Plane, SceneSpec, Sphere, Texture

_EPS = 1e-6


@dataclass(frozen=True)
class RenderedFrame:
    frame_index: int
    image: np.ndarray
    depth: np.ndarray
    points_global: np.ndarray
    points_self: np.ndarray
    valid: np.ndarray
    dynamic: np.ndarray
    primitive: np.ndarray
    surface_uv: np.ndarray
    quat: np.ndarray
    trans: np.ndarray
    intrinsics: np.ndarray


@dataclass(frozen=True)
class SceneSequence:
    spec: SceneSpec
    frames: Tuple[RenderedFrame, ...]

    def __len__(self) -> int:
        return len(self.frames)


def camera_rays(k: np.ndarray, height: int, width: int) -> np.ndarray:
    """Camera-frame ray directions through pixel centres, ``z = 1``: ``[H, W, 3]``."""
    ys, xs = np.meshgrid(np.arange(height) + 0.5, np.arange(width) + 0.5, indexing="ij")
    return np.stack([(xs - k[0, 2]) / k[0, 0], (ys - k[1, 2]) / k[1, 1], np.ones_like(xs)], axis=-1)


# ----------------------------
# Intersections: each returns (t[N], uv[N, 2]) with t = inf on a miss
# ----------------------------

def _hit_plane(p: Plane, o: np.ndarray, d: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    n = np.asarray(p.normal)
    denom = d @ n
    with np.errstate(divide="ignore", invalid="ignore"):
        t = ((np.asarray(p.origin) - o) @ n) / denom
    t = np.where((np.abs(denom) > 1e-12) & (t > _EPS), t, np.inf)
    hit = o + np.where(np.isfinite(t), t, 0.0)[:, None] * d - np.asarray(p.origin)
    uv = np.stack([hit @ np.asarray(p.axis_u), hit @ np.asarray(p.axis_v)], axis=-1)
    return t, uv


def _yaw_matrix(yaw: float) -> np.ndarray:
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def _hit_box(b: Box, o: np.ndarray, d: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    rot = _yaw_matrix(b.yaw)
    h = np.asarray(b.half_extents)
    ol = (o - np.asarray(b.center)) @ rot
    dl = d @ rot
    dl = np.where(np.abs(dl) < 1e-12, 1e-12, dl)
    t1, t2 = (-h - ol) / dl, (h - ol) / dl
    tmin = np.minimum(t1, t2).max(axis=-1)
    tmax = np.maximum(t1, t2).min(axis=-1)
    t = np.where(tmin > _EPS, tmin, tmax)
    t = np.where((tmax >= tmin) & (t > _EPS), t, np.inf)
    local = ol + np.where(np.isfinite(t), t, 0.0)[:, None] * dl
    face = np.argmax(np.abs(local) / h, axis=-1)
    others = np.array([[1, 2], [0, 2], [0, 1]])[face]
    uv = np.take_along_axis(local, others, axis=-1)
    return t, uv


def _hit_sphere(s: Sphere, o: np.ndarray, d: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    oc = o - np.asarray(s.center)
    a = np.einsum("ij,ij->i", d, d)
    b = 2.0 * (d @ oc)
    c = oc @ oc - s.radius**2
    disc = b * b - 4.0 * a * c
    root = np.sqrt(np.maximum(disc, 0.0))
    near = (-b - root) / (2.0 * a)
    far = (-b + root) / (2.0 * a)
    t = np.where(near > _EPS, near, far)
    t = np.where((disc >= 0.0) & (t > _EPS), t, np.inf)
    local = oc + np.where(np.isfinite(t), t, 0.0)[:, None] * d
    r = np.linalg.norm(local, axis=-1) + 1e-12
    uv = np.stack([np.arctan2(local[:, 2], local[:, 0]) * s.radius, np.arccos(np.clip(local[:, 1] / r, -1, 1)) * s.radius], axis=-1)
    return t, uv


def _intersect(prim, o: np.ndarray, d: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    if isinstance(prim, Plane):
        return _hit_plane(prim, o, d)
    if isinstance(prim, Box):
        return _hit_box(prim, o, d)
    if isinstance(prim, Sphere):
        return _hit_sphere(prim, o, d)
    raise InputError(f"unknown primitive {type(prim).__name__}")


def _shade(tex: Texture, uv: np.ndarray, depth: np.ndarray) -> np.ndarray:
    cells = np.floor(uv * tex.frequency).astype(np.int64).sum(axis=-1)
    base = np.where((cells % 2 == 0)[:, None], np.asarray(tex.color_a), np.asarray(tex.color_b))
    shade = 0.75 + 0.25 / (1.0 + 0.1 * depth)
    return np.clip(base * shade[:, None], 0.0, 1.0)


# ----------------------------
# Rendering
# ----------------------------

def render_frame(spec: SceneSpec, t: int) -> RenderedFrame:
    if not 0 <= t < spec.frames:
        raise InputError(f"frame {t} outside [0, {spec.frames})")
    h, w = spec.height, spec.width
    k = intrinsics_np(spec.fov_y, h, w)
    r, tau = spec.camera.pose(t, spec.frames)
    rays_cam = camera_rays(k, h, w).reshape(-1, 3)
    centre = -r.T @ tau
    origins = np.broadcast_to(centre, rays_cam.shape)
    dirs = rays_cam @ r

    best_t = np.full(h * w, np.inf)
    best_uv = np.zeros((h * w, 2))
    best_id = np.full(h * w, -1, dtype=np.int64)
    prims = spec.primitives_at(t)
    for pid, (prim, _) in enumerate(prims):
        tt, uv = _intersect(prim, origins, dirs)
        closer = tt < best_t
        best_t = np.where(closer, tt, best_t)
        best_uv[closer] = uv[closer]
        best_id[closer] = pid
    valid = np.isfinite(best_t) & (best_t <= spec.far)
    best_id[~valid] = -1

    depth = np.where(valid, best_t, 0.0)
    points_self = rays_cam * depth[:, None]
    points_global = centre + dirs * depth[:, None]
    points_global[~valid] = 0.0
    is_dyn = np.array([dyn for _, dyn in prims] + [False], dtype=bool)
    dynamic = is_dyn[best_id] & valid

    image = np.zeros((h * w, 3))
    for pid, (prim, _) in enumerate(prims):
        sel = best_id == pid
        if sel.any():
            image[sel] = _shade(prim.texture, best_uv[sel], depth[sel])

    return RenderedFrame(
        frame_index=t,
        image=image.reshape(h, w, 3),
        depth=depth.reshape(h, w),
        points_global=points_global.reshape(h, w, 3),
        points_self=points_self.reshape(h, w, 3),
        valid=valid.reshape(h, w),
        dynamic=dynamic.reshape(h, w),
        primitive=best_id.reshape(h, w),
        surface_uv=np.where(valid[:, None], best_uv, 0.0).reshape(h, w, 2),
        quat=matrix_to_quat_np(r),
        trans=tau,
        intrinsics=k,
    )


def render_sequence(spec: SceneSpec) -> SceneSequence:
    frames: List[RenderedFrame] = [render_frame(spec, t) for t in range(spec.frames)]
    return SceneSequence(spec, tuple(frames))
