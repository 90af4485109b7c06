from __future__ import annotations

import numpy as np
import pytest
from plyfile import PlyData

from dualmem.errors import InputError
from dualmem.export import export_point_clouds, read_ply_vertex_count, write_ply
from evalkit.report import SequencePredictions


def _preds(frames: int = 2, h: int = 3, w: int = 4) -> SequencePredictions:
    rng = np.random.default_rng(7)
    conf = 1.0 + np.arange(frames * h * w, dtype=np.float64).reshape(frames, h, w) / 10.0
    return SequencePredictions(
        quats=np.tile([0.0, 0.0, 0.0, 1.0], (frames, 1)),
        trans=np.zeros((frames, 3)),
        points_global=rng.normal(size=(frames, h, w, 3)),
        conf_global=conf,
        points_self=rng.normal(size=(frames, h, w, 3)),
        conf_self=conf.copy(),
        intrinsics=np.tile(np.eye(3), (frames, 1, 1)),
    )


def test_write_ply_columns(tmp_path):
    pts = np.array([[0.0, 1.0, 2.0], [-1.5, 0.25, 3.0]])
    conf = np.array([1.0, 2.5])
    rgb = np.array([[1.0, 0.0, 0.5], [0.2, 0.4, 2.0]])
    path = tmp_path / "sub" / "a.ply"
    assert write_ply(path, pts, conf, rgb) == 2

    vertex = PlyData.read(str(path))["vertex"]
    assert vertex.count == 2
    assert np.allclose(np.stack([vertex["x"], vertex["y"], vertex["z"]], axis=-1), pts)
    assert np.allclose(vertex["confidence"], conf)
    assert vertex["red"].tolist() == [255, 51]
    assert vertex["green"].tolist() == [0, 102]
    assert vertex["blue"].tolist() == [128, 255]
    assert read_ply_vertex_count(path) == 2


def test_write_ply_defaults_to_white_and_checks_lengths(tmp_path):
    path = tmp_path / "white.ply"
    write_ply(path, np.zeros((3, 3)), np.ones(3))
    assert PlyData.read(str(path))["vertex"]["red"].tolist() == [255, 255, 255]
    with pytest.raises(InputError):
        write_ply(tmp_path / "bad.ply", np.zeros((3, 3)), np.ones(2))


def test_read_ply_vertex_count_rejects_other_files(tmp_path):
    bad = tmp_path / "bad.ply"
    bad.write_text("not a ply file\n")
    with pytest.raises(InputError):
        read_ply_vertex_count(bad)


def test_export_point_clouds_counts(tmp_path):
    preds = _preds()
    written = export_point_clouds(tmp_path, preds, conf_threshold=0.0, per_frame=True)
    assert [p.name for p in written] == ["fused.ply", "frame_000000.ply", "frame_000001.ply"]
    assert read_ply_vertex_count(tmp_path / "fused.ply") == 24
    assert read_ply_vertex_count(tmp_path / "frame_000001.ply") == 12

    # confidences run 1.0 .. 3.3; only the last four clear 3.0
    export_point_clouds(tmp_path / "hi", preds, conf_threshold=3.0)
    assert read_ply_vertex_count(tmp_path / "hi" / "fused.ply") == 4
