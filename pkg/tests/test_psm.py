from __future__ import annotations

import math

import numpy as np
import pytest

from dualmem import tensor as T
from dualmem.errors import InputError
from dualmem.psm import (
    PersistentStructureMemory,
    PsmEntry,
    StructureEncoder,
    compress_for_readout,
    compression_kernel,
    encode_structure,
    memory_arrays,
    memory_from_arrays,
)
from dualmem.tensor import GradientTape, Parameter, Tensor

from gradcheck import max_relative_error

C = 12


def _entry(frame: int, h: int = 8, w: int = 8, seed: int | None = None, anchor: bool = False) -> PsmEntry:
    rng = np.random.default_rng(frame if seed is None else seed)
    return PsmEntry(Tensor(rng.normal(size=(h * w, C))), (h, w), frame, anchor)


def _bank(capacity: int, frames) -> PersistentStructureMemory:
    mem = PersistentStructureMemory(capacity)
    for f in frames:
        mem = mem.push(_entry(f))
    return mem


@pytest.fixture(scope="module")
def encoder():
    return StructureEncoder(4, C, 6, 1, np.random.default_rng(0), mlp_ratio=2)


# ----------------------------
# Bank
# ----------------------------

def test_kernel_table():
    expected = [(1, 1, 1)] * 2 + [(1, 2, 2)] * 2 + [(2, 4, 4)] * 2 + [(4, 8, 8)] * 15
    assert [compression_kernel(d) for d in range(21)] == expected
    assert compression_kernel(7) == (4, 8, 8)
    assert compression_kernel(4) == (2, 4, 4)
    assert compression_kernel(1) == (1, 1, 1)
    with pytest.raises(InputError):
        compression_kernel(-1)


def test_anchor_is_pinned_and_oldest_non_anchor_evicted():
    assert _bank(3, [0, 1, 2]).frame_indices == [0, 1, 2]
    mem = _bank(3, [0, 1, 2, 3])
    assert mem.frame_indices == [0, 2, 3]
    assert mem.anchor is not None and mem.anchor.frame_index == 0


def test_capacity_one_keeps_only_the_anchor():
    mem = _bank(1, range(6))
    assert mem.frame_indices == [0]


def test_out_of_order_push_is_rejected():
    mem = _bank(4, [0, 1, 2])
    with pytest.raises(InputError):
        mem.push(_entry(2))
    with pytest.raises(InputError):
        mem.push(_entry(5, anchor=True))
    with pytest.raises(InputError):
        PersistentStructureMemory(0)


def test_randomized_eviction_invariants():
    rng = np.random.default_rng(123)
    pushes = 0
    while pushes < 10_000:
        capacity = int(rng.integers(1, 8))
        n = int(rng.integers(1, 40))
        mem = PersistentStructureMemory(capacity)
        evicted = []
        frame = 0
        for _ in range(n):
            before = set(mem.frame_indices)
            mem = mem.push(PsmEntry(Tensor(np.zeros((1, 1))), (1, 1), frame))
            evicted.extend(sorted(before - set(mem.frame_indices)))
            frame += int(rng.integers(1, 3))
            pushes += 1
            assert len(mem) == min(len(before) + 1, capacity)
            assert mem.anchor is not None and mem.anchor.frame_index == 0
            rest = mem.frame_indices[1:]
            assert rest == sorted(rest) and len(set(rest)) == len(rest)
        assert evicted == sorted(evicted)


# ----------------------------
# Encoder
# ----------------------------

def test_encode_structure_is_deterministic(encoder):
    pm = np.random.default_rng(1).normal(size=(8, 8, 3))
    a = encode_structure(Tensor(pm), 3, encoder)
    b = encode_structure(Tensor(pm.copy()), 3, encoder)
    assert a.extents == (2, 2) and a.features.shape == (4, C)
    assert np.array_equal(a.features.data, b.features.data)
    z1 = encode_structure(Tensor(np.zeros((8, 8, 3))), 0, encoder)
    z2 = encode_structure(Tensor(np.zeros((8, 8, 3))), 0, encoder)
    assert np.array_equal(z1.features.data, z2.features.data)


def test_encode_structure_rejects_nan(encoder):
    pm = np.zeros((8, 8, 3))
    pm[1, 2, 0] = np.nan
    with pytest.raises(InputError):
        encode_structure(Tensor(pm), 0, encoder)


def test_no_gradient_reaches_the_pointmap(encoder):
    pm = Parameter(np.random.default_rng(2).normal(size=(8, 8, 3)))
    with GradientTape() as tape:
        out = T.tsum(encode_structure(pm, 1, encoder).features)
    grads = tape.backward(out)
    assert np.array_equal(grads.of(pm), np.zeros((8, 8, 3)))
    assert np.any(grads.of(encoder.embed.conv.weight) != 0.0)


def test_encoder_parameter_gradients(encoder):
    pm = Tensor(np.random.default_rng(3).normal(size=(8, 8, 3)))
    w = Tensor(np.random.default_rng(4).normal(size=(4, C)))
    params = [encoder.embed.conv.weight, encoder.encoder.blocks[0].attn.qkv.weight, encoder.encoder.blocks[0].mlp.fc2.weight]
    assert max_relative_error(lambda: T.tsum(encode_structure(pm, 2, encoder).features * w), params) < 1e-3


# ----------------------------
# Readout
# ----------------------------

def test_anchor_only_readout_is_uncompressed(encoder):
    mem = _bank(4, [0])
    out = compress_for_readout(mem, 1, encoder)
    assert out.count == 64
    assert np.array_equal(out.tokens.data, mem.anchor.features.data)


def test_recent_frames_compress_by_age(encoder):
    mem = _bank(4, [0, 3, 4])
    out = compress_for_readout(mem, 5, encoder)
    assert out.count == 64 + 16 + 64
    assert np.array_equal(out.tokens.data[:64], mem.anchor.features.data)
    assert sorted(set(out.positions[:, 0].tolist())) == [0, 3, 4]


def test_old_entries_collapse_in_groups_of_four(encoder):
    entries = tuple(_entry(f) for f in range(1, 9))
    mem = PersistentStructureMemory(16, entries)
    out = compress_for_readout(mem, 14, encoder)
    assert out.count == 2
    assert sorted(out.positions[:, 0].tolist()) == [1, 5]


def test_token_count_is_non_increasing_with_age(encoder):
    counts = []
    for d in range(1, 21):
        mem = PersistentStructureMemory(2, (_entry(0),))
        counts.append(compress_for_readout(mem, d, encoder).count)
    assert counts == sorted(counts, reverse=True)
    for d, n in zip(range(1, 21), counts):
        kt, kh, kw = compression_kernel(d)
        assert n == math.ceil(1 / kt) * math.ceil(8 / kh) * math.ceil(8 / kw)


def test_readout_rejects_empty_bank_and_future_entries(encoder):
    with pytest.raises(InputError):
        compress_for_readout(PersistentStructureMemory(2), 1, encoder)
    with pytest.raises(InputError):
        compress_for_readout(_bank(4, [0, 3]), 3, encoder)


def test_memory_arrays_round_trip():
    mem = _bank(3, [0, 1, 2, 3])
    back = memory_from_arrays(3, memory_arrays(mem))
    assert back.frame_indices == [0, 2, 3]
    assert back.anchor is not None
    for a, b in zip(mem.entries, back.entries):
        assert np.array_equal(a.features.data, b.features.data)
