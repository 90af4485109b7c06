from __future__ import annotations

import math

import numpy as np
import pytest

from dualmem import tensor as T
from dualmem.decoder import (
    CameraHead,
    Decoder,
    UpsampleHead,
    camera_head,
    decode_frame,
    iterative_readout,
    motion_read_block,
    pointmap_head,
    spatial_read_block,
)
from dualmem.errors import ConfigError
from dualmem.nn import AttentionBlock, TokenGrid, grid_positions
from dualmem.tensor import Parameter, Tensor

from gradcheck import max_relative_error

C = 12


def _grid(h: int, w: int, t: int, seed: int) -> TokenGrid:
    rng = np.random.default_rng(seed)
    return TokenGrid(Tensor(rng.normal(size=(h * w, C))), grid_positions(h, w, t), (h, w))


def _decoder(stages: int = 1, seed: int = 0) -> Decoder:
    return Decoder(C, C, C, 6, stages, 4, np.random.default_rng(seed), mlp_ratio=2)


def _fixed_camera(raw: np.ndarray) -> CameraHead:
    head = CameraHead(C, np.random.default_rng(0))
    head.mlp.fc2.weight.data = np.zeros_like(head.mlp.fc2.weight.data)
    head.mlp.fc2.bias.data = np.asarray(raw, dtype=np.float64)
    return head


def _motion(t: int) -> TokenGrid:
    # relative positions: -1 is the previous frame
    return _grid(2, 2, -1, seed=10 + t)


# ----------------------------
# Read blocks
# ----------------------------

def test_read_blocks_preserve_partition_sizes():
    block = AttentionBlock(C, 6, np.random.default_rng(0), mlp_ratio=2)
    cam = (Tensor(np.ones((1, C))), np.array([[3, -1, -1]]))
    frame = (_grid(2, 2, 3, 1).tokens, grid_positions(2, 2, 3))
    mem = (_grid(2, 2, 2, 2).tokens, grid_positions(2, 2, 2))
    c, f, m = motion_read_block(cam, frame, mem, block)
    assert c.shape == (1, C) and f.shape == (4, C) and m.shape == (4, C)
    c, f, m = motion_read_block(cam, frame, None, block)
    assert m is None and f.shape == (4, C)
    c, f, s = spatial_read_block(cam, frame, mem, block)
    assert c.shape == (1, C) and f.shape == (4, C) and s.shape == (4, C)
    c, f, s = spatial_read_block(cam, frame, None, block)
    assert s is None and f.shape == (4, C)


def test_empty_memory_read_is_plain_self_attention():
    block = AttentionBlock(C, 6, np.random.default_rng(0), mlp_ratio=2)
    cam = (Tensor(np.ones((1, C))), np.array([[0, -1, -1]]))
    frame = (_grid(2, 2, 0, 1).tokens, grid_positions(2, 2, 0))
    c, f, _ = motion_read_block(cam, frame, None, block)
    joint = block(T.concat([cam[0], frame[0]], axis=0), np.concatenate([cam[1], frame[1]]))
    assert np.allclose(c.data, joint.data[:1])
    assert np.allclose(f.data, joint.data[1:])


def test_read_block_gradients():
    block = AttentionBlock(C, 6, np.random.default_rng(3), mlp_ratio=2)
    cam = Parameter(np.random.default_rng(4).normal(size=(1, C)))
    mem = Parameter(np.random.default_rng(5).normal(size=(4, C)))
    frame = _grid(2, 2, 2, 6)

    def loss():
        c, f, s = spatial_read_block((cam, np.array([[2, -1, -1]])), (frame.tokens, frame.positions), (mem, grid_positions(2, 2, 0)), block)
        return T.tsum(c * c) + T.tsum(T.tanh(f)) + T.tsum(s * s)

    assert max_relative_error(loss, [cam, mem, block.attn.qkv.weight]) < 1e-4


# ----------------------------
# Readout order
# ----------------------------

@pytest.mark.parametrize("stages,expected", [(1, "MS"), (3, "MSMSMS")])
def test_readout_alternates_motion_then_spatial(stages, expected):
    dec = _decoder(stages)
    trace = []
    iterative_readout(_grid(2, 2, 4, 0), 4, _motion(4), _grid(2, 2, 0, 7), dec, trace=trace)
    assert "".join(trace) == expected


def test_disabled_reads_are_skipped():
    dec = _decoder(2)
    trace = []
    iterative_readout(_grid(2, 2, 4, 0), 4, None, _grid(2, 2, 0, 7), dec, use_motion=False, trace=trace)
    assert trace == ["S", "S"]
    trace = []
    iterative_readout(_grid(2, 2, 4, 0), 4, _motion(4), None, dec, use_structure=False, trace=trace)
    assert trace == ["M", "M"]


def test_readout_is_deterministic():
    dec = _decoder(2)
    a = iterative_readout(_grid(2, 2, 4, 0), 4, _motion(4), _grid(2, 2, 0, 7), dec)[1].data
    b = iterative_readout(_grid(2, 2, 4, 0), 4, _motion(4), _grid(2, 2, 0, 7), dec)[1].data
    assert np.array_equal(a, b)


def test_structure_memory_changes_the_readout():
    dec = _decoder(1)
    a = iterative_readout(_grid(2, 2, 4, 0), 4, None, _grid(2, 2, 0, 7), dec)[1].data
    b = iterative_readout(_grid(2, 2, 4, 0), 4, None, _grid(2, 2, 0, 8), dec)[1].data
    assert not np.allclose(a, b)


def _spatial_only(dec: Decoder, frame: TokenGrid, t: int, structure: TokenGrid, carry: bool) -> np.ndarray:
    cam = (dec.camera_token, np.array([[t, -1, -1]]))
    cur = (frame.tokens, grid_positions(*frame.extents, t))
    initial = (dec.project_structure(structure), structure.positions)
    mem = initial
    for block in dec.spatial_blocks:
        c, f, s = spatial_read_block(cam, cur, mem, block)
        cam, cur = (c, cam[1]), (f, cur[1])
        mem = (s, mem[1]) if carry else initial
    return cur[0].data


def test_structure_tokens_carry_across_stages():
    dec = _decoder(2)
    frame, structure = _grid(2, 2, 4, 0), _grid(2, 2, 0, 7)
    out = iterative_readout(frame, 4, None, structure, dec, use_motion=False)[1].data
    carried = _spatial_only(dec, frame, 4, structure, carry=True)
    reset = _spatial_only(dec, frame, 4, structure, carry=False)
    np.testing.assert_allclose(out, carried, rtol=0, atol=1e-12)
    assert not np.allclose(out, reset)


def test_unified_memory_carries_motion_tokens_in_the_structure_read():
    dec = _decoder(2)
    frame, structure, motion = _grid(2, 2, 4, 0), _grid(2, 2, 0, 7), _motion(4)
    merged_pos = motion.positions.copy()
    merged_pos[:, 0] += 4
    merged = TokenGrid(
        T.concat([structure.tokens, motion.tokens], axis=0),
        np.concatenate([structure.positions, merged_pos], axis=0),
        (2, 2),
    )
    out = iterative_readout(frame, 4, motion, structure, dec, use_motion=False)[1].data
    np.testing.assert_allclose(out, _spatial_only(dec, frame, 4, merged, carry=True), rtol=0, atol=1e-12)


# ----------------------------
# Heads
# ----------------------------

def test_pointmap_head_extents_and_confidence():
    head = UpsampleHead(C, 4, 4, np.random.default_rng(0))
    tokens = Tensor(np.random.default_rng(1).normal(size=(6, C)) * 5.0)
    points, conf = pointmap_head(tokens, (2, 3), head)
    assert points.shape == (8, 12, 3)
    assert conf.shape == (8, 12)
    assert np.all(conf.data > 1.0)
    with pytest.raises(ConfigError):
        UpsampleHead(C, 3, 4, np.random.default_rng(0))


def test_patch_one_head_is_a_projection():
    head = UpsampleHead(C, 1, 4, np.random.default_rng(0))
    points, conf = pointmap_head(Tensor(np.zeros((4, C))), (2, 2), head)
    assert points.shape == (2, 2, 3)
    assert np.allclose(conf.data, 2.0)


def test_head_gradients():
    head = UpsampleHead(C, 4, 4, np.random.default_rng(2))
    tokens = Parameter(np.random.default_rng(3).normal(size=(4, C)))

    def loss():
        p, c = pointmap_head(tokens, (2, 2), head)
        return T.tsum(p * p) + T.tsum(T.log(c))

    assert max_relative_error(loss, [tokens, head.stages[0].weight, head.stages[1].bias]) < 1e-5


def test_global_and_self_heads_share_no_parameters():
    dec = _decoder()
    a = {id(p) for p in dec.head_global.parameters()}
    b = {id(p) for p in dec.head_self.parameters()}
    assert a and b and not (a & b)


def test_camera_head_normalizes_and_passes_translation():
    head = _fixed_camera([0.0, 0.0, 0.0, 0.0, 2.0, 0.5, -1.0, 3.0])
    quat, trans, fov, k, degenerate = camera_head(Tensor(np.ones((1, C))), (48, 64), head)
    assert np.allclose(quat.data, [0.0, 0.0, 0.0, 1.0])
    assert np.allclose(trans.data, [0.5, -1.0, 3.0])
    assert fov.item() == pytest.approx(math.radians(60.0))
    assert k.data[0, 0] == pytest.approx(48 / (2 * math.tan(math.radians(30.0))))
    assert np.allclose(k.data[:, 2], [32.0, 24.0, 1.0])
    assert not degenerate


def test_camera_head_flips_to_upper_hemisphere():
    head = _fixed_camera([0.0, 0.3, 0.0, 0.4, -1.2, 0.0, 0.0, 0.0])
    quat = camera_head(Tensor(np.ones((1, C))), (16, 16), head)[0].data
    assert quat[3] >= 0.0
    assert np.linalg.norm(quat) == pytest.approx(1.0, abs=1e-10)
    assert np.allclose(quat, -np.array([0.3, 0.0, 0.4, -1.2]) / np.linalg.norm([0.3, 0.0, 0.4, -1.2]))


def test_degenerate_quaternion_falls_back_to_identity():
    head = _fixed_camera([0.0, 1e-12, 0.0, 0.0, 0.0, 1.0, 2.0, 3.0])
    quat, trans, _, _, degenerate = camera_head(Tensor(np.ones((1, C))), (16, 16), head)
    assert degenerate
    assert np.array_equal(quat.data, [0.0, 0.0, 0.0, 1.0])
    assert np.allclose(trans.data, [1.0, 2.0, 3.0])


# ----------------------------
# Whole frame
# ----------------------------

def test_first_frame_path_is_valid():
    dec = _decoder(2)
    pred = decode_frame(_grid(2, 2, 0, 0), 0, None, None, dec, (8, 8))
    assert pred.points_global.shape == (8, 8, 3)
    assert pred.points_self.shape == (8, 8, 3)
    assert np.all(pred.conf_global.data > 1.0) and np.all(pred.conf_self.data > 1.0)
    assert np.linalg.norm(pred.quat.data) == pytest.approx(1.0, abs=1e-10)
    assert pred.quat.data[3] >= 0.0
    k = pred.intrinsics.data
    assert k[0, 0] > 0 and k[1, 0] == 0 and k[2, 0] == 0 and k[2, 1] == 0
    assert pred.detached().trace == pred.trace


def test_decode_frame_gradients():
    dec = _decoder(1, seed=5)
    frame, motion, structure = _grid(2, 2, 3, 0), _motion(3), _grid(2, 2, 0, 7)
    w = Tensor(np.random.default_rng(9).normal(size=(8, 8, 3)))

    def loss():
        p = decode_frame(frame, 3, motion, structure, dec, (8, 8))
        return T.tsum(p.points_global * w) + T.tsum(p.quat * np.array([0.1, 0.2, 0.3, 0.4])) + p.fov_y

    params = [dec.camera_token, dec.motion_blocks[0].attn.qkv.weight, dec.spatial_blocks[0].mlp.fc1.weight, dec.camera.mlp.fc2.weight]
    assert max_relative_error(loss, params) < 1e-3
