from __future__ import annotations

import dataclasses
import math

import numpy as np
import pytest

from dualmem.config import SceneConfig
from dualmem.errors import ConfigError, InputError
from dualmem.geometry import quat_to_matrix_np
from scenegen import (
    CameraPath,
    Plane,
    SceneSpec,
    Texture,
    generate_scene,
    list_sequences,
    load_dataset,
    load_sequence,
    render_frame,
    render_sequence,
    save_dataset,
    save_sequence,
)

SMALL = SceneConfig(width=16, height=12, frames=3)


def _wall_scene() -> SceneSpec:
    wall = Plane((0.0, 0.0, 2.0), (0.0, 0.0, -1.0), (1.0, 0.0, 0.0), (0.0, 1.0, 0.0), Texture((0.9, 0.1, 0.1), (0.1, 0.1, 0.9), 2.0))
    return SceneSpec(
        seed=0, width=8, height=8, frames=1, fov_y=math.radians(60.0),
        planes=(wall,), statics=(), dynamics=(), camera=CameraPath(((0.0, 0.0, 0.0, 0.0),)),
    )


def test_same_seed_same_scene():
    assert generate_scene(3, SMALL) == generate_scene(3, SMALL)
    assert generate_scene(3, SMALL).digest() == generate_scene(3, SMALL).digest()


def test_ten_seeds_ten_layouts():
    assert len({generate_scene(s, SMALL).digest() for s in range(10)}) == 10


def test_static_scene_has_no_dynamic_pixels():
    spec = generate_scene(1, dataclasses.replace(SMALL, dynamic_objects=0))
    assert spec.dynamics == ()
    for f in render_sequence(spec).frames:
        assert not f.dynamic.any()


def test_fronto_parallel_wall_depth():
    frame = render_frame(_wall_scene(), 0)
    assert frame.valid.all()
    assert np.allclose(frame.depth, 2.0)
    assert np.allclose(frame.quat, [0.0, 0.0, 0.0, 1.0])
    assert 0.0 <= frame.image.min() <= frame.image.max() <= 1.0


def test_self_and_global_points_agree_through_the_pose():
    seq = render_sequence(generate_scene(2, SMALL))
    for f in seq.frames:
        r = quat_to_matrix_np(f.quat)
        mapped = f.points_global @ r.T + f.trans
        assert np.allclose(mapped[f.valid], f.points_self[f.valid], atol=1e-10)
        assert np.allclose(f.depth[f.valid], f.points_self[f.valid][:, 2])
        assert np.all(f.depth[f.valid] > 0.0)
        assert np.all(f.depth[~f.valid] == 0.0)


def test_world_frame_is_first_camera():
    f = render_sequence(generate_scene(4, SMALL)).frames[0]
    assert np.allclose(f.quat, [0.0, 0.0, 0.0, 1.0], atol=1e-12)
    assert np.allclose(f.trans, 0.0, atol=1e-12)
    assert np.allclose(f.points_global[f.valid], f.points_self[f.valid], atol=1e-10)


def test_plane_points_are_fixed_surface_points():
    spec = generate_scene(5, SMALL)
    for f in render_sequence(spec).frames:
        for pid, plane in enumerate(spec.planes):
            sel = f.primitive == pid
            if not sel.any():
                continue
            uv = f.surface_uv[sel]
            rebuilt = np.asarray(plane.origin) + uv[:, :1] * np.asarray(plane.axis_u) + uv[:, 1:] * np.asarray(plane.axis_v)
            assert np.allclose(rebuilt, f.points_global[sel], atol=1e-9)


def test_dynamic_mask_marks_moving_primitives():
    spec = generate_scene(6, dataclasses.replace(SMALL, dynamic_objects=2))
    first_dynamic = len(spec.planes) + len(spec.statics)
    for f in render_sequence(spec).frames:
        assert np.array_equal(f.dynamic, f.valid & (f.primitive >= first_dynamic))


def test_bad_requests_are_rejected():
    with pytest.raises(InputError):
        render_frame(_wall_scene(), 1)
    with pytest.raises(ConfigError):
        generate_scene(0, dataclasses.replace(SMALL, frames=0))
    with pytest.raises(ConfigError):
        generate_scene(0, dataclasses.replace(SMALL, room_size=0.0, static_boxes=0, spheres=0))


def test_sequence_round_trip(tmp_path):
    seq = render_sequence(generate_scene(7, SMALL))
    save_sequence(seq, tmp_path / "seq")
    frames = load_sequence(tmp_path / "seq")
    assert len(frames) == len(seq)
    for a, b in zip(seq.frames, frames):
        assert np.abs(a.image - b.image).max() <= 0.5 / 255.0 + 1e-12
        assert np.array_equal(a.points_global, b.points_global)
        assert np.array_equal(a.valid, b.valid)
        assert np.allclose(a.quat, b.quat) and np.allclose(a.intrinsics, b.intrinsics)


def test_dataset_layout(tmp_path):
    seqs = [render_sequence(generate_scene(s, SMALL)) for s in range(2)]
    paths = save_dataset(seqs, tmp_path / "data")
    assert [p.name for p in paths] == ["seq_0000", "seq_0001"]
    assert list_sequences(tmp_path / "data") == paths
    assert [len(s) for s in load_dataset(tmp_path / "data")] == [3, 3]
    with pytest.raises(InputError):
        list_sequences(tmp_path / "nowhere")
    with pytest.raises(InputError):
        load_sequence(tmp_path)
