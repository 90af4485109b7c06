"""Transient dynamics memory: short-range motion cues from all-pairs correlation.

For the current aggregated tokens and each of the last ``k_d`` frames'
aggregated tokens, an all-pairs correlation volume is pooled into a pyramid,
every query cell's pyramid slice is flattened and mapped to a motion feature
by an MLP, and a small attention stack encodes the result.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from . import tensor as T
from .errors import ConfigError, ShapeError
from .nn import Mlp, Module, TokenGrid, TransformerStack
from .tensor import Tensor


@dataclass(frozen=True)
class CorrelationVolume:
    """``values[H, W, H, W]``; ``values[y, x, y', x']`` pairs current cell (y, x) with past cell (y', x')."""

    values: Tensor
    distance: int = 1


@dataclass(frozen=True)
class TransientDynamicsMemory:
    """Motion-feature grids, ``entries[j - 1]`` for the frame ``j`` steps back."""

    entries: Tuple[TokenGrid, ...] = ()

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def empty(self) -> bool:
        return not self.entries

    def joined(self) -> TokenGrid | None:
        if not self.entries:
            return None
        tokens = T.concat([e.tokens for e in self.entries], axis=0)
        pos = np.concatenate([e.positions for e in self.entries], axis=0)
        return TokenGrid(tokens, pos, self.entries[0].extents)


def correlation_volume(current: TokenGrid, past: TokenGrid, scale: bool = True, distance: int = 1) -> CorrelationVolume:
    if current.extents != past.extents or current.channels != past.channels:
        raise ShapeError(
            f"correlation needs matching grids, got {current.extents}x{current.channels} "
            f"and {past.extents}x{past.channels}"
        )
    h, w = current.extents
    corr = T.matmul(current.tokens, T.transpose(past.tokens))
    if scale:
        corr = T.scale(corr, 1.0 / math.sqrt(current.channels))
    return CorrelationVolume(T.reshape(corr, (h, w, h, w)), distance)


def correlation_pyramid(volume: CorrelationVolume, levels: int) -> List[Tensor]:
    """Level 0 is the raw volume; level ``l`` average-pools the past axes by ``2**l``."""
    if levels < 1:
        raise ConfigError(f"correlation pyramid needs >= 1 level, got {levels}")
    out = [volume.values]
    for _ in range(1, levels):
        out.append(T.pool2d(out[-1], 2))
    return out


def pyramid_length(extents: Tuple[int, int], levels: int) -> int:
    """Per-cell feature length of a flattened pyramid over an ``extents`` grid."""
    h, w = extents
    total = 0
    for _ in range(levels):
        total += h * w
        h, w = math.ceil(h / 2), math.ceil(w / 2)
    return total


def motion_features(pyramid: Sequence[Tensor], mlp: Mlp) -> Tensor:
    """Flatten each query cell's pyramid slice and map it to ``C_m`` channels: ``[H*W, C_m]``."""
    h, w = pyramid[0].shape[:2]
    flat = [T.reshape(level, (h * w, level.shape[2] * level.shape[3])) for level in pyramid]
    return mlp(T.concat(flat, axis=1))


class DynamicsEncoder(Module):
    def __init__(
        self,
        extents: Tuple[int, int],
        levels: int,
        c_m: int,
        head_dim: int,
        layers: int,
        rng: np.random.Generator,
        scale: bool = True,
        mlp_ratio: int = 4,
        rope_base: float = 100.0,
    ) -> None:
        self.extents = tuple(extents)
        self.levels = levels
        self.scale = scale
        self.mlp = Mlp(pyramid_length(self.extents, levels), c_m, c_m, rng)
        self.encoder = TransformerStack(layers, c_m, head_dim, rng, mlp_ratio, rope_base)

    def __call__(self, current: TokenGrid, recent: Sequence[TokenGrid]) -> TransientDynamicsMemory:
        return build_tdm(current, recent, self)


def build_tdm(current: TokenGrid, recent: Sequence[TokenGrid], params: DynamicsEncoder) -> TransientDynamicsMemory:
    """Motion memory from ``current`` against ``recent`` (newest first); empty when ``recent`` is."""
    if tuple(current.extents) != params.extents:
        raise ShapeError(f"dynamics encoder built for {params.extents}, got {current.extents}")
    entries = []
    h, w = current.extents
    for j, past in enumerate(recent, start=1):
        vol = correlation_volume(current, past, params.scale, distance=j)
        feats = motion_features(correlation_pyramid(vol, params.levels), params.mlp)
        ys, xs = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
        pos = np.stack([np.full(h * w, -j), ys.reshape(-1), xs.reshape(-1)], axis=1)
        entries.append(TokenGrid(params.encoder(feats, pos), pos, (h, w)))
    return TransientDynamicsMemory(tuple(entries))
