"""Persistent structure memory: a bounded bank of encoded pointmaps.

The first frame's entry is the anchor and is never evicted. When the bank is
over capacity the oldest non-anchor entry goes. At readout, entries are
compressed with a spatio-temporal kernel that coarsens with age; the anchor
always passes through uncompressed.
"""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass
from typing import Dict, List, Tuple

import numpy as np

from . import tensor as T
from .errors import InputError
from .nn import CONV3D_KERNELS, Module, PatchEmbed, StridedConv3d, TokenGrid, TransformerStack, conv3d_strided
from .tca import window_centre
from .tensor import Tensor

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PsmEntry:
    features: Tensor
    extents: Tuple[int, int]
    frame_index: int
    anchor: bool = False

    def as_map(self) -> Tensor:
        h, w = self.extents
        return T.reshape(self.features, (h, w, self.features.shape[-1]))


@dataclass(frozen=True)
class PersistentStructureMemory:
    capacity: int
    entries: Tuple[PsmEntry, ...] = ()

    def __post_init__(self) -> None:
        if self.capacity < 1:
            raise InputError(f"structure memory capacity must be >= 1, got {self.capacity}")

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def frame_indices(self) -> List[int]:
        return [e.frame_index for e in self.entries]

    @property
    def anchor(self) -> PsmEntry | None:
        return self.entries[0] if self.entries and self.entries[0].anchor else None

    def push(self, entry: PsmEntry) -> "PersistentStructureMemory":
        """Append ``entry``; the first entry ever pushed becomes the anchor."""
        if self.entries:
            if entry.anchor:
                raise InputError("structure memory already has an anchor")
            last = self.entries[-1].frame_index
            if entry.frame_index <= last:
                raise InputError(f"out-of-order push: frame {entry.frame_index} after frame {last}")
            entries = self.entries + (entry,)
        else:
            entries = (dataclasses.replace(entry, anchor=True),)
        if len(entries) > self.capacity:
            victim = next(i for i, e in enumerate(entries) if not e.anchor)
            logger.debug("evicting frame %d from structure memory", entries[victim].frame_index)
            entries = entries[:victim] + entries[victim + 1 :]
        return PersistentStructureMemory(self.capacity, entries)


def compression_kernel(d: int) -> Tuple[int, int, int]:
    """``(k_t, k_h, k_w)`` for an entry ``d`` frames old."""
    if d < 0:
        raise InputError(f"temporal distance must be >= 0, got {d}")
    if d >= 6:
        return (4, 8, 8)
    if d >= 4:
        return (2, 4, 4)
    if d >= 2:
        return (1, 2, 2)
    return (1, 1, 1)


class StructureEncoder(Module):
    def __init__(
        self,
        patch: int,
        c_s: int,
        head_dim: int,
        layers: int,
        rng: np.random.Generator,
        mlp_ratio: int = 4,
        rope_base: float = 100.0,
    ) -> None:
        self.embed = PatchEmbed(patch, 3, c_s, rng)
        self.encoder = TransformerStack(layers, c_s, head_dim, rng, mlp_ratio, rope_base)
        self.compressors = [StridedConv3d(c_s, k, rng) for k in CONV3D_KERNELS]

    def compressor(self, kernel: Tuple[int, int, int]) -> StridedConv3d:
        return self.compressors[CONV3D_KERNELS.index(tuple(kernel))]


def encode_structure(pointmap: Tensor, frame_index: int, params: StructureEncoder) -> PsmEntry:
    """Encode a world-frame pointmap ``[H, W, 3]``; no gradient reaches the pointmap."""
    pointmap = T.as_tensor(pointmap)
    if not np.all(np.isfinite(pointmap.data)):
        raise InputError(f"frame {frame_index}: pointmap contains non-finite values")
    grid = params.embed(pointmap.detach(), t=frame_index)
    feats = params.encoder(grid.tokens, grid.positions)
    return PsmEntry(feats, grid.extents, frame_index)


def compress_for_readout(memory: PersistentStructureMemory, t: int, params: StructureEncoder) -> TokenGrid:
    """Readout tokens for the frame with index ``t``.

    Non-anchor entries sharing a kernel are stacked along time in bank order
    and chunked into groups of the kernel's temporal extent (the last group
    edge-replicated). Each output token is placed at the origin frame index
    of its chunk and the floor of its spatial window centre.
    """
    if not memory.entries:
        raise InputError("structure memory is empty")
    tokens: List[Tensor] = []
    positions: List[np.ndarray] = []
    anchor = memory.anchor
    rest = memory.entries
    if anchor is not None:
        h, w = anchor.extents
        ys, xs = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
        tokens.append(anchor.features)
        positions.append(np.stack([np.full(h * w, anchor.frame_index), ys.reshape(-1), xs.reshape(-1)], axis=1))
        rest = memory.entries[1:]

    runs: List[Tuple[Tuple[int, int, int], List[PsmEntry]]] = []
    for entry in rest:
        d = t - entry.frame_index
        if d < 1:
            raise InputError(f"entry from frame {entry.frame_index} is not in the past of frame {t}")
        kernel = compression_kernel(d)
        if runs and runs[-1][0] == kernel:
            runs[-1][1].append(entry)
        else:
            runs.append((kernel, [entry]))

    for kernel, group in runs:
        kt, kh, kw = kernel
        volume = T.stack([e.as_map() for e in group], axis=0)
        out = conv3d_strided(volume, params.compressor(kernel))
        to, ho, wo, c = out.shape
        origins = np.array([group[o * kt].frame_index for o in range(to)])
        ot, oy, ox = np.meshgrid(origins, window_centre(np.arange(ho), kh), window_centre(np.arange(wo), kw), indexing="ij")
        tokens.append(T.reshape(out, (to * ho * wo, c)))
        positions.append(np.stack([ot.reshape(-1), oy.reshape(-1), ox.reshape(-1)], axis=1))

    extents = memory.entries[0].extents
    return TokenGrid(T.concat(tokens, axis=0), np.concatenate(positions, axis=0), extents)


def memory_arrays(memory: PersistentStructureMemory) -> Dict[str, np.ndarray]:
    out: Dict[str, np.ndarray] = {}
    for i, e in enumerate(memory.entries):
        out[f"{i}.features"] = e.features.data
        out[f"{i}.meta"] = np.array([e.frame_index, int(e.anchor), *e.extents], dtype=np.int64)
    return out


def memory_from_arrays(capacity: int, arrays: Dict[str, np.ndarray]) -> PersistentStructureMemory:
    entries = []
    i = 0
    while f"{i}.features" in arrays:
        idx, anchor, h, w = (int(v) for v in arrays[f"{i}.meta"])
        entries.append(PsmEntry(T.Tensor(arrays[f"{i}.features"]), (h, w), idx, bool(anchor)))
        i += 1
    return PersistentStructureMemory(capacity, tuple(entries))
