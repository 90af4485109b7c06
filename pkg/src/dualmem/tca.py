"""Temporal context aggregation over a sliding window of past frame tokens.

Each past frame ``j`` steps back is compressed with a strided convolution
whose stride grows with ``j``; the current frame's tokens then attend jointly
over themselves and the compressed history, and only the current tokens are
returned.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Tuple

import numpy as np

from . import tensor as T
from .errors import InputError
from .nn import CONV2D_STRIDES, Module, StridedConv2d, TokenGrid, TransformerStack, conv2d_strided


def stride_schedule(j: int) -> int:
    """Compression stride for a frame ``j`` steps in the past."""
    if j < 0:
        raise InputError(f"temporal distance must be >= 0, got {j}")
    if j < 2:
        return 1
    if j < 4:
        return 2
    return 4


def window_centre(index: np.ndarray, stride: int) -> np.ndarray:
    """Original-grid coordinate of a strided output cell: floor of the window centre."""
    return (2 * np.asarray(index) * stride + stride - 1) // 2


@dataclass(frozen=True)
class HistoryEntry:
    frame_index: int
    grid: TokenGrid


@dataclass(frozen=True)
class HistoryWindow:
    """Past frame tokens, newest first, at most ``capacity`` entries."""

    capacity: int
    entries: Tuple[HistoryEntry, ...] = ()

    def __post_init__(self) -> None:
        if self.capacity < 0:
            raise InputError(f"history capacity must be >= 0, got {self.capacity}")
        if len(self.entries) > self.capacity:
            raise InputError(f"{len(self.entries)} history entries exceed capacity {self.capacity}")
        idx = [e.frame_index for e in self.entries]
        if any(b != a - 1 for a, b in zip(idx, idx[1:])):
            raise InputError(f"history frame indices must be consecutive and decreasing, got {idx}")

    def __len__(self) -> int:
        return len(self.entries)

    def push(self, frame_index: int, grid: TokenGrid) -> "HistoryWindow":
        if self.entries and frame_index != self.entries[0].frame_index + 1:
            raise InputError(f"frame {frame_index} does not follow {self.entries[0].frame_index}")
        if self.capacity == 0:
            return self
        kept = (HistoryEntry(frame_index, grid),) + self.entries
        return HistoryWindow(self.capacity, kept[: self.capacity])


class TemporalContextAggregator(Module):
    def __init__(
        self,
        c: int,
        head_dim: int,
        layers: int,
        rng: np.random.Generator,
        mlp_ratio: int = 4,
        rope_base: float = 100.0,
    ) -> None:
        self.convs = [StridedConv2d(c, c, s, rng) for s in CONV2D_STRIDES]
        self.stack = TransformerStack(layers, c, head_dim, rng, mlp_ratio, rope_base)

    def conv_for(self, stride: int) -> StridedConv2d:
        return self.convs[CONV2D_STRIDES.index(stride)]

    def __call__(self, current: TokenGrid, window: HistoryWindow) -> TokenGrid:
        return aggregate(current, window, self)


def compress_history(window: HistoryWindow, params: TemporalContextAggregator) -> List[TokenGrid]:
    """Compressed token grids, one per history entry, positioned at ``(-j, y, x)``."""
    out = []
    for j, entry in enumerate(window.entries, start=1):
        s = stride_schedule(j)
        fmap = conv2d_strided(entry.grid.as_map(), params.conv_for(s))
        ho, wo, c = fmap.shape
        ys, xs = np.meshgrid(window_centre(np.arange(ho), s), window_centre(np.arange(wo), s), indexing="ij")
        pos = np.stack([np.full(ho * wo, -j), ys.reshape(-1), xs.reshape(-1)], axis=1)
        out.append(TokenGrid(T.reshape(fmap, (ho * wo, c)), pos, (ho, wo)))
    return out


def aggregate(current: TokenGrid, window: HistoryWindow, params: TemporalContextAggregator) -> TokenGrid:
    """Temporally contextualised current tokens; same extents and positions as ``current``."""
    history = compress_history(window, params)
    if history and any(h.channels != current.channels for h in history):
        raise InputError("history channels differ from current frame channels")
    tokens = T.concat([current.tokens] + [h.tokens for h in history], axis=0)
    positions = np.concatenate([current.positions] + [h.positions for h in history], axis=0)
    mixed = params.stack(tokens, positions)
    return current.with_tokens(T.getitem(mixed, slice(0, current.count)))


def history_arrays(window: HistoryWindow) -> Dict[str, np.ndarray]:
    out: Dict[str, np.ndarray] = {}
    for i, e in enumerate(window.entries):
        out[f"{i}.tokens"] = e.grid.tokens.data
        out[f"{i}.positions"] = e.grid.positions
        out[f"{i}.meta"] = np.array([e.frame_index, *e.grid.extents], dtype=np.int64)
    return out


def history_from_arrays(capacity: int, arrays: Dict[str, np.ndarray]) -> HistoryWindow:
    entries = []
    i = 0
    while f"{i}.tokens" in arrays:
        idx, h, w = (int(v) for v in arrays[f"{i}.meta"])
        grid = TokenGrid(T.Tensor(arrays[f"{i}.tokens"]), arrays[f"{i}.positions"], (h, w))
        entries.append(HistoryEntry(idx, grid))
        i += 1
    return HistoryWindow(capacity, tuple(entries))
