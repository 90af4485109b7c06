"""Procedural dynamic scenes: a room of textured planes, static boxes and
spheres, moving objects with parametric trajectories, and a smooth camera path.

World coordinates coincide with the first camera (x right, y down, z forward),
so the floor sits at positive y.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from hashlib import sha256
from typing import List, Tuple

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.spatial.transform import Rotation

from dualmem.config import SceneConfig
from dualmem.errors import ConfigError
from dualmem.seeding import make_rng

Vec3 = Tuple[float, float, float]
TRAJECTORY_KINDS = ("linear", "circular", "sinusoidal")
FAR_PLANE = 20.0


@dataclass(frozen=True)
class Texture:
    color_a: Vec3
    color_b: Vec3
    frequency: float


@dataclass(frozen=True)
class Plane:
    origin: Vec3
    normal: Vec3
    axis_u: Vec3
    axis_v: Vec3
    texture: Texture


@dataclass(frozen=True)
class Box:
    center: Vec3
    half_extents: Vec3
    yaw: float
    texture: Texture


@dataclass(frozen=True)
class Sphere:
    center: Vec3
    radius: float
    texture: Texture


@dataclass(frozen=True)
class Trajectory:
    """Displacement of a dynamic primitive's centre as a function of frame index."""

    kind: str
    direction: Vec3
    amplitude: float
    speed: float
    spin: float = 0.0

    def offset(self, t: float) -> np.ndarray:
        d = np.asarray(self.direction, dtype=np.float64)
        if self.kind == "linear":
            return d * self.speed * t
        if self.kind == "circular":
            ang = self.speed * t
            # circle in the horizontal (x, z) plane
            return self.amplitude * np.array([math.cos(ang) - 1.0, 0.0, math.sin(ang)])
        if self.kind == "sinusoidal":
            return d * self.amplitude * math.sin(self.speed * t)
        raise ConfigError(f"unknown trajectory kind {self.kind!r}")


@dataclass(frozen=True)
class DynamicObject:
    shape: object
    trajectory: Trajectory

    def at(self, t: float):
        """The primitive posed at frame ``t``."""
        c = np.asarray(self.shape.center) + self.trajectory.offset(t)
        center = tuple(float(v) for v in c)
        if isinstance(self.shape, Box):
            return Box(center, self.shape.half_extents, self.shape.yaw + self.trajectory.spin * t, self.shape.texture)
        return Sphere(center, self.shape.radius, self.shape.texture)


@dataclass(frozen=True)
class CameraPath:
    """Cubic spline through ``(x, y, z, yaw)`` waypoints; the first waypoint is the world origin."""

    waypoints: Tuple[Tuple[float, float, float, float], ...]

    def pose(self, t: int, frames: int) -> Tuple[np.ndarray, np.ndarray]:
        """World->camera ``(R, tau)`` at frame ``t`` of ``frames``."""
        wp = np.asarray(self.waypoints, dtype=np.float64)
        u = 0.0 if frames <= 1 else t / (frames - 1)
        knots = np.linspace(0.0, 1.0, len(wp))
        sample = CubicSpline(knots, wp, axis=0, bc_type="natural")(u) if len(wp) > 1 else wp[0]
        centre, yaw = sample[:3], float(sample[3])
        r_c2w = Rotation.from_euler("y", yaw).as_matrix()
        r = r_c2w.T
        return r, -r @ centre


@dataclass(frozen=True)
class SceneSpec:
    seed: int
    width: int
    height: int
    frames: int
    fov_y: float
    planes: Tuple[Plane, ...]
    statics: Tuple[object, ...]
    dynamics: Tuple[DynamicObject, ...]
    camera: CameraPath
    far: float = FAR_PLANE

    def primitives_at(self, t: int) -> List[Tuple[object, bool]]:
        """``(primitive, is_dynamic)`` in id order."""
        out = [(p, False) for p in self.planes] + [(s, False) for s in self.statics]
        return out + [(d.at(t), True) for d in self.dynamics]

    def to_dict(self) -> dict:
        return _jsonable(asdict(self))

    def digest(self) -> str:
        return sha256(json.dumps(self.to_dict(), sort_keys=True).encode("utf-8")).hexdigest()


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return obj


# ----------------------------
# Random scene layout
# ----------------------------

def _texture(rng: np.random.Generator) -> Texture:
    a = rng.uniform(0.1, 0.9, size=3)
    b = np.clip(1.0 - a + rng.uniform(-0.1, 0.1, size=3), 0.0, 1.0)
    return Texture(tuple(a.tolist()), tuple(b.tolist()), float(rng.uniform(1.0, 3.0)))


def _room(size: float, rng: np.random.Generator) -> Tuple[Plane, ...]:
    half = size / 2.0
    floor_y = 1.2
    return (
        Plane((0.0, floor_y, 0.0), (0.0, -1.0, 0.0), (1.0, 0.0, 0.0), (0.0, 0.0, 1.0), _texture(rng)),
        Plane((0.0, 0.0, size), (0.0, 0.0, -1.0), (1.0, 0.0, 0.0), (0.0, 1.0, 0.0), _texture(rng)),
        Plane((-half, 0.0, 0.0), (1.0, 0.0, 0.0), (0.0, 0.0, 1.0), (0.0, 1.0, 0.0), _texture(rng)),
        Plane((half, 0.0, 0.0), (-1.0, 0.0, 0.0), (0.0, 0.0, 1.0), (0.0, 1.0, 0.0), _texture(rng)),
        Plane((0.0, -floor_y - 1.0, 0.0), (0.0, 1.0, 0.0), (1.0, 0.0, 0.0), (0.0, 0.0, 1.0), _texture(rng)),
    )


def _validate(config: SceneConfig) -> None:
    if config.width < 1 or config.height < 1 or config.frames < 1:
        raise ConfigError("scene needs positive image extents and at least one frame")
    if not 0.0 < config.fov_y_deg < 180.0:
        raise ConfigError(f"fov_y_deg must be in (0, 180), got {config.fov_y_deg}")
    if config.dynamic_objects < 0 or config.static_boxes < 0 or config.spheres < 0:
        raise ConfigError("primitive counts must be >= 0")
    if config.room_size != 0.0 and not 2.0 <= config.room_size <= FAR_PLANE / 2.0:
        raise ConfigError(f"room_size must be 0 (no room) or in [2, {FAR_PLANE / 2.0}], got {config.room_size}")
    if config.room_size == 0.0 and config.static_boxes + config.spheres == 0:
        raise ConfigError("scene has no static primitives")


def generate_scene(seed: int, config: SceneConfig) -> SceneSpec:
    """Deterministic scene layout for ``seed``."""
    _validate(config)
    rng = make_rng(seed, "scene")
    size = config.room_size
    planes = _room(size, rng) if size > 0.0 else ()
    size = size or 6.0

    statics: List[object] = []
    for _ in range(config.static_boxes):
        h = rng.uniform(0.2, 0.5, size=3)
        c = (rng.uniform(-size / 3, size / 3), 1.2 - h[1], rng.uniform(size / 2, size - 1.0))
        statics.append(Box(tuple(float(v) for v in c), tuple(h.tolist()), float(rng.uniform(0, math.pi)), _texture(rng)))
    for _ in range(config.spheres):
        r = float(rng.uniform(0.2, 0.4))
        c = (rng.uniform(-size / 3, size / 3), float(rng.uniform(-0.5, 1.2 - r)), rng.uniform(size / 2, size - 1.0))
        statics.append(Sphere(tuple(float(v) for v in c), r, _texture(rng)))

    dynamics: List[DynamicObject] = []
    for _ in range(config.dynamic_objects):
        kind = TRAJECTORY_KINDS[int(rng.integers(len(TRAJECTORY_KINDS)))]
        direction = rng.normal(size=3)
        direction[1] *= 0.2
        direction /= np.linalg.norm(direction)
        traj = Trajectory(
            kind,
            tuple(direction.tolist()),
            float(rng.uniform(0.2, 0.6)),
            float(config.object_speed * rng.uniform(0.5, 1.5) * (1.0 if kind == "linear" else 4.0)),
            float(rng.uniform(-0.2, 0.2)),
        )
        c = (float(rng.uniform(-0.6, 0.6)), float(rng.uniform(-0.2, 0.5)), float(rng.uniform(2.0, 3.5)))
        if rng.random() < 0.5:
            shape = Box(c, tuple(rng.uniform(0.2, 0.35, size=3).tolist()), float(rng.uniform(0, math.pi)), _texture(rng))
        else:
            shape = Sphere(c, float(rng.uniform(0.25, 0.4)), _texture(rng))
        dynamics.append(DynamicObject(shape, traj))

    n_way = 4
    travel = config.camera_speed * max(config.frames - 1, 1)
    waypoints = [(0.0, 0.0, 0.0, 0.0)]
    for i in range(1, n_way):
        frac = i / (n_way - 1)
        waypoints.append(
            (
                float(rng.uniform(-0.3, 0.3) * travel),
                float(rng.uniform(-0.05, 0.05) * travel),
                float(frac * travel),
                float(rng.uniform(-0.25, 0.25)),
            )
        )
    return SceneSpec(
        seed=int(seed),
        width=config.width,
        height=config.height,
        frames=config.frames,
        fov_y=math.radians(config.fov_y_deg),
        planes=planes,
        statics=tuple(statics),
        dynamics=tuple(dynamics),
        camera=CameraPath(tuple(waypoints)),
    )
