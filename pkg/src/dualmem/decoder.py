"""Memory readout and prediction heads.

The camera token and the current frame's tokens alternate between a motion
read (joint attention with the dynamics memory) and a spatial read (joint
attention with the structure memory) for a fixed number of stages. Two
upsampling heads turn frame tokens into world- and camera-frame pointmaps
with confidence; a small head turns the camera token into pose and field of
view.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from . import geometry
from . import tensor as T
from .errors import ConfigError
from .nn import AttentionBlock, Linear, Mlp, Module, TokenGrid, grid_positions
from .tensor import Parameter, Tensor

logger = logging.getLogger(__name__)

DEGENERATE_QUAT_NORM = 1e-8


@dataclass(frozen=True)
class ReadoutTokens:
    camera: Tensor
    frame: Tensor
    motion_memory: Optional[Tensor] = None


@dataclass
class FramePrediction:
    frame_index: int
    points_global: Tensor
    conf_global: Tensor
    points_self: Tensor
    conf_self: Tensor
    quat: Tensor
    trans: Tensor
    fov_y: Tensor
    intrinsics: Tensor
    degenerate_quat: bool = False
    trace: List[str] = field(default_factory=list)

    def tensors(self) -> List[Tensor]:
        return [
            self.points_global, self.conf_global, self.points_self, self.conf_self,
            self.quat, self.trans, self.fov_y, self.intrinsics,
        ]

    def detached(self) -> "FramePrediction":
        d = [t.detach() for t in self.tensors()]
        return FramePrediction(self.frame_index, *d, degenerate_quat=self.degenerate_quat, trace=list(self.trace))


def _joint(block: AttentionBlock, parts: Sequence[Tuple[Tensor, np.ndarray]]) -> List[Tensor]:
    tokens = T.concat([p[0] for p in parts], axis=0)
    positions = np.concatenate([p[1] for p in parts], axis=0)
    mixed = block(tokens, positions)
    out, start = [], 0
    for tok, _ in parts:
        n = tok.shape[0]
        out.append(T.getitem(mixed, slice(start, start + n)))
        start += n
    return out


def motion_read_block(
    camera: Tuple[Tensor, np.ndarray],
    frame: Tuple[Tensor, np.ndarray],
    memory: Optional[Tuple[Tensor, np.ndarray]],
    params: AttentionBlock,
) -> Tuple[Tensor, Tensor, Optional[Tensor]]:
    """Joint attention over ``[camera | frame | motion memory]``; all three are returned updated."""
    parts = [camera, frame] + ([memory] if memory is not None else [])
    out = _joint(params, parts)
    return out[0], out[1], (out[2] if memory is not None else None)


def spatial_read_block(
    camera: Tuple[Tensor, np.ndarray],
    frame: Tuple[Tensor, np.ndarray],
    memory: Optional[Tuple[Tensor, np.ndarray]],
    params: AttentionBlock,
) -> Tuple[Tensor, Tensor, Optional[Tensor]]:
    """Joint attention over ``[camera | frame | structure memory]``; all three are returned updated."""
    parts = [camera, frame] + ([memory] if memory is not None else [])
    out = _joint(params, parts)
    return out[0], out[1], (out[2] if memory is not None else None)


class UpsampleHead(Module):
    """Tokens ``[h*w, C]`` -> ``[h*P, w*P, c_out]`` through learned 2x pixel-shuffle stages."""

    def __init__(self, c: int, patch: int, c_out: int, rng: np.random.Generator) -> None:
        if patch < 1 or patch & (patch - 1):
            raise ConfigError(f"patch size must be a power of two, got {patch}")
        n = int(round(math.log2(patch)))
        widths = [c] + [max(c >> (i + 1), 8) for i in range(n)]
        widths[-1] = c_out
        self.stages = [Linear(widths[i], 4 * widths[i + 1], rng) for i in range(n)]
        self.out = Linear(c, c_out, rng) if n == 0 else None

    def __call__(self, tokens: Tensor, extents: Tuple[int, int]) -> Tensor:
        h, w = extents
        x = T.reshape(tokens, (h, w, tokens.shape[-1]))
        if self.out is not None:
            return self.out(x)
        for i, lin in enumerate(self.stages):
            x = lin(x)
            c = x.shape[-1] // 4
            x = T.reshape(x, (h, w, 2, 2, c))
            x = T.transpose(x, (0, 2, 1, 3, 4))
            h, w = 2 * h, 2 * w
            x = T.reshape(x, (h, w, c))
            if i + 1 < len(self.stages):
                x = T.gelu(x)
        return x


def pointmap_head(tokens: Tensor, extents: Tuple[int, int], params: UpsampleHead) -> Tuple[Tensor, Tensor]:
    """``(points[H, W, 3], confidence[H, W])`` with confidence ``1 + exp(raw) > 1``."""
    out = params(tokens, extents)
    points = T.take(out, [0, 1, 2], axis=-1)
    raw = T.reshape(T.take(out, [3], axis=-1), out.shape[:2])
    return points, 1.0 + T.exp(raw)


class CameraHead(Module):
    def __init__(self, c: int, rng: np.random.Generator, fov_max_deg: float = 120.0) -> None:
        self.mlp = Mlp(c, c, 8, rng)
        self.fov_max = math.radians(fov_max_deg)


def camera_head(
    token: Tensor, image_size: Tuple[int, int], params: CameraHead
) -> Tuple[Tensor, Tensor, Tensor, Tensor, bool]:
    """Camera token ``[1, C]`` -> ``(quat[4], trans[3], fov_y, K[3, 3], degenerate)``.

    A raw quaternion with norm below ``DEGENERATE_QUAT_NORM`` falls back to
    identity and is flagged.
    """
    out = T.reshape(params.mlp(token), (8,))
    fov = T.scale(T.sigmoid(T.getitem(out, 0)), params.fov_max)
    raw_q = T.take(out, [1, 2, 3, 4])
    trans = T.take(out, [5, 6, 7])
    n = T.norm(raw_q, axis=0)
    degenerate = n.item() < DEGENERATE_QUAT_NORM
    if degenerate:
        logger.warning("degenerate camera quaternion (norm %.3g); using identity", n.item())
        quat = T.as_tensor(geometry.IDENTITY_QUAT.copy())
    else:
        quat = raw_q / n
        quat = quat * geometry.hemisphere_sign(quat)
    h, w = image_size
    return quat, trans, fov, geometry.intrinsics(fov, h, w), degenerate


class Decoder(Module):
    def __init__(
        self,
        c: int,
        c_m: int,
        c_s: int,
        head_dim: int,
        stages: int,
        patch: int,
        rng: np.random.Generator,
        fov_max_deg: float = 120.0,
        mlp_ratio: int = 4,
        rope_base: float = 100.0,
    ) -> None:
        if stages < 1:
            raise ConfigError(f"readout needs >= 1 stage, got {stages}")
        self.camera_token = Parameter(rng.normal(0.0, 0.02, size=(1, c)))
        self.motion_proj = Linear(c_m, c, rng) if c_m != c else None
        self.structure_proj = Linear(c_s, c, rng) if c_s != c else None
        self.motion_blocks = [AttentionBlock(c, head_dim, rng, mlp_ratio, rope_base) for _ in range(stages)]
        self.spatial_blocks = [AttentionBlock(c, head_dim, rng, mlp_ratio, rope_base) for _ in range(stages)]
        self.head_global = UpsampleHead(c, patch, 4, rng)
        self.head_self = UpsampleHead(c, patch, 4, rng)
        self.camera = CameraHead(c, rng, fov_max_deg)
        self.stages = stages
        self.patch = patch

    def project_motion(self, grid: TokenGrid) -> Tensor:
        return grid.tokens if self.motion_proj is None else self.motion_proj(grid.tokens)

    def project_structure(self, grid: TokenGrid) -> Tensor:
        return grid.tokens if self.structure_proj is None else self.structure_proj(grid.tokens)


def iterative_readout(
    frame: TokenGrid,
    frame_index: int,
    motion: Optional[TokenGrid],
    structure: Optional[TokenGrid],
    params: Decoder,
    use_motion: bool = True,
    use_structure: bool = True,
    trace: Optional[List[str]] = None,
) -> Tuple[Tensor, Tensor]:
    """Alternate motion and spatial reads; returns ``(camera[1, C], frame[N, C])``.

    Memory grids carry positions relative to the current frame (time ``0``)
    for motion and absolute frame indices for structure; both are shifted
    onto the absolute time axis here. A disabled read is skipped entirely;
    an enabled read with no memory attends over camera and frame tokens only.
    """
    h, w = frame.extents
    cam = (params.camera_token, np.array([[frame_index, -1, -1]], dtype=np.int64))
    cur = (frame.tokens, grid_positions(h, w, frame_index))
    mem_m = None
    if motion is not None:
        pos = motion.positions.copy()
        pos[:, 0] += frame_index
        mem_m = (params.project_motion(motion), pos)
    mem_s = None
    if structure is not None:
        mem_s = (params.project_structure(structure), structure.positions)
    if not use_motion and mem_m is not None:
        # unified memory: motion tokens join the structure read
        mem_s = mem_m if mem_s is None else (
            T.concat([mem_s[0], mem_m[0]], axis=0),
            np.concatenate([mem_s[1], mem_m[1]], axis=0),
        )
        mem_m = None
    for stage in range(params.stages):
        if use_motion:
            c, f, m = motion_read_block(cam, cur, mem_m, params.motion_blocks[stage])
            cam, cur = (c, cam[1]), (f, cur[1])
            if mem_m is not None:
                mem_m = (m, mem_m[1])
            if trace is not None:
                trace.append("M")
        if use_structure:
            c, f, s = spatial_read_block(cam, cur, mem_s, params.spatial_blocks[stage])
            cam, cur = (c, cam[1]), (f, cur[1])
            if mem_s is not None:
                mem_s = (s, mem_s[1])
            if trace is not None:
                trace.append("S")
    return cam[0], cur[0]


def decode_frame(
    frame: TokenGrid,
    frame_index: int,
    motion: Optional[TokenGrid],
    structure: Optional[TokenGrid],
    params: Decoder,
    image_size: Tuple[int, int],
    use_motion: bool = True,
    use_structure: bool = True,
) -> FramePrediction:
    trace: List[str] = []
    cam, tokens = iterative_readout(frame, frame_index, motion, structure, params, use_motion, use_structure, trace)
    xg, cg = pointmap_head(tokens, frame.extents, params.head_global)
    xs, cs = pointmap_head(tokens, frame.extents, params.head_self)
    quat, trans, fov, k, degenerate = camera_head(cam, image_size, params.camera)
    return FramePrediction(frame_index, xg, cg, xs, cs, quat, trans, fov, k, degenerate, trace)
