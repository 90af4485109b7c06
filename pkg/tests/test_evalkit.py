from __future__ import annotations

import json
import math

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from dualmem.config import EvalConfig
from dualmem.errors import DegenerateInputError, InputError
from evalkit import (
    SequencePredictions,
    Sim3,
    Trajectory,
    aggregate_metrics,
    ate,
    build_report,
    chamfer_acc_comp,
    depth_metrics,
    evaluate_sequence,
    rpe,
    select_views,
    sparse_view_reconstruction,
    umeyama_sim3,
    write_report,
)

from toys import toy_frames


def _cloud(n: int = 20, seed: int = 0) -> np.ndarray:
    return np.random.default_rng(seed).normal(size=(n, 3))


def _trajectory(n: int, seed: int) -> Trajectory:
    rng = np.random.default_rng(seed)
    return Trajectory(rng.normal(size=(n, 4)), rng.normal(size=(n, 3)))


def _regauge(traj: Trajectory, sim: Sim3) -> Trajectory:
    """Same cameras expressed in a world moved by ``sim`` (rigid part + scale)."""
    mats = traj.cam_to_world()
    out = mats.copy()
    out[:, :3, :3] = sim.rotation @ mats[:, :3, :3]
    out[:, :3, 3] = sim.apply(mats[:, :3, 3])
    return Trajectory.from_cam_to_world(out)


# ----------------------------
# Alignment
# ----------------------------

def test_umeyama_identity_and_pure_scale():
    gt = _cloud()
    sim = umeyama_sim3(gt, gt)
    assert sim.scale == pytest.approx(1.0)
    assert np.allclose(sim.rotation, np.eye(3)) and np.allclose(sim.translation, 0.0)
    half = umeyama_sim3(2.0 * gt, gt)
    assert half.scale == pytest.approx(0.5)
    assert np.allclose(half.rotation, np.eye(3)) and np.allclose(half.translation, 0.0, atol=1e-12)


def test_umeyama_recovers_random_similarities(rng):
    worst = 0.0
    for i in range(100):
        truth = Sim3(float(rng.uniform(0.2, 5.0)), Rotation.from_rotvec(rng.normal(size=3)).as_matrix(), rng.normal(size=3) * 3)
        pred = _cloud(30, seed=i)
        got = umeyama_sim3(pred, truth.apply(pred))
        worst = max(worst, abs(got.scale - truth.scale), np.abs(got.rotation - truth.rotation).max(),
                    np.abs(got.translation - truth.translation).max())
    assert worst < 1e-8


def test_umeyama_rejects_degenerate_sets():
    line = np.outer(np.arange(5.0), [1.0, 2.0, 3.0])
    with pytest.raises(DegenerateInputError):
        umeyama_sim3(line, line)
    with pytest.raises(DegenerateInputError):
        umeyama_sim3(_cloud(2), _cloud(2))
    with pytest.raises(InputError):
        umeyama_sim3(_cloud(4), _cloud(5))


def test_sim3_inverse():
    sim = Sim3(2.0, Rotation.from_euler("z", 0.4).as_matrix(), np.array([1.0, 2.0, 3.0]))
    pts = _cloud(5)
    assert np.allclose(sim.inverse().apply(sim.apply(pts)), pts)
    assert np.allclose(sim.matrix()[:3, 3], sim.translation)


# ----------------------------
# Pose errors
# ----------------------------

def test_ate_examples():
    gt = _trajectory(6, 1)
    assert ate(gt, gt) == pytest.approx(0.0, abs=1e-10)
    moved = _regauge(gt, Sim3(1.0, np.eye(3), np.array([5.0, -1.0, 2.0])))
    assert ate(moved, gt, align=True) == pytest.approx(0.0, abs=1e-9)
    assert ate(moved, gt, align=False) == pytest.approx(math.sqrt(25 + 1 + 4))


def test_ate_matches_loop_oracle():
    centres_gt = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [1.0, 1.0, 0.0]])
    centres_p = np.array([[0.1, 0.0, 0.0], [1.0, 0.2, 0.0], [1.0, 1.0, -0.3]])
    eye = np.tile(np.eye(4), (3, 1, 1))
    gm, pm = eye.copy(), eye.copy()
    gm[:, :3, 3], pm[:, :3, 3] = centres_gt, centres_p
    err = [sum((a - b) ** 2 for a, b in zip(p, g)) for p, g in zip(centres_p, centres_gt)]
    expected = math.sqrt(sum(err) / 3)
    got = ate(Trajectory.from_cam_to_world(pm), Trajectory.from_cam_to_world(gm), align=False)
    assert got == pytest.approx(expected)


def test_rpe_examples():
    gt = _trajectory(8, 2)
    t_same, r_same = rpe(gt, gt)
    assert t_same == pytest.approx(0.0, abs=1e-9) and r_same == pytest.approx(0.0, abs=1e-4)
    moved = _regauge(gt, Sim3(1.0, Rotation.from_euler("xyz", [0.2, 0.3, -0.5]).as_matrix(), np.array([1.0, 2.0, 3.0])))
    t_err, r_err = rpe(moved, gt, delta=2)
    assert t_err == pytest.approx(0.0, abs=1e-9)
    assert r_err == pytest.approx(0.0, abs=1e-4)


def test_rpe_one_degree_yaw_per_step():
    n = 6
    gm = np.tile(np.eye(4), (n, 1, 1))
    pm = gm.copy()
    for i in range(n):
        pm[i, :3, :3] = Rotation.from_euler("y", i, degrees=True).as_matrix()
    t_err, r_err = rpe(Trajectory.from_cam_to_world(pm), Trajectory.from_cam_to_world(gm))
    assert t_err == pytest.approx(0.0, abs=1e-12)
    assert r_err == pytest.approx(1.0, rel=1e-6)


def test_rpe_scale_and_short_trajectories():
    gt = _trajectory(5, 3)
    shrunk = _regauge(gt, Sim3(0.5, np.eye(3), np.zeros(3)))
    assert rpe(shrunk, gt, scale=2.0)[0] == pytest.approx(0.0, abs=1e-9)
    assert rpe(shrunk, gt)[0] > 0.0
    assert rpe(_trajectory(1, 4), _trajectory(1, 5)) == (0.0, 0.0)
    with pytest.raises(InputError):
        rpe(gt, gt, delta=0)
    with pytest.raises(InputError):
        ate(gt, _trajectory(4, 6))


def test_trajectory_subsample():
    traj = _trajectory(7, 7)
    sub = traj.subsample(3)
    assert len(sub) == 3
    assert np.array_equal(sub.timestamps, [0.0, 3.0, 6.0])
    with pytest.raises(InputError):
        traj.subsample(0)


# ----------------------------
# Depth
# ----------------------------

def test_depth_examples():
    gt = np.random.default_rng(0).uniform(1.0, 5.0, size=(4, 4))
    same = depth_metrics(gt, gt)
    assert same.abs_rel == pytest.approx(0.0) and same.delta_125 == 100.0
    metric = depth_metrics(1.2 * gt, gt, mode="metric")
    assert metric.abs_rel == pytest.approx(0.2) and metric.delta_125 == 100.0
    scene = depth_metrics(1.2 * gt, gt, mode="scale")
    assert scene.abs_rel == pytest.approx(0.0, abs=1e-12) and scene.delta_125 == 100.0
    shifted = depth_metrics(2.0 * gt + 1.0, gt, mode="scale_shift")
    assert shifted.abs_rel == pytest.approx(0.0, abs=1e-10)


def test_depth_masks_and_errors():
    gt = np.array([[1.0, 2.0], [0.0, 4.0]])
    pred = np.array([[1.0, 4.0], [9.0, 4.0]])
    m = depth_metrics(pred, gt, mask=np.array([[True, True], [True, False]]), mode="metric")
    assert m.pixels == 2
    assert m.abs_rel == pytest.approx(0.5)
    assert m.delta_125 == pytest.approx(50.0)
    with pytest.raises(InputError):
        depth_metrics(pred, gt, mask=np.zeros((2, 2), dtype=bool))
    with pytest.raises(InputError):
        depth_metrics(pred, gt, mode="affine")
    with pytest.raises(InputError):
        depth_metrics(pred[:1], gt)


# ----------------------------
# Reconstruction
# ----------------------------

def test_chamfer_examples():
    cloud = _cloud(50)
    same = chamfer_acc_comp(cloud, cloud)
    assert same.acc_mean == 0.0 and same.comp_median == 0.0
    single = chamfer_acc_comp(np.array([[0.0, 0.0, 3.0]]), np.zeros((1, 3)))
    assert single.acc_mean == pytest.approx(3.0) and single.comp_mean == pytest.approx(3.0)
    xs, ys = np.meshgrid(np.arange(0.0, 2.0, 0.05), np.arange(0.0, 2.0, 0.05))
    plane = np.stack([xs.ravel(), ys.ravel(), np.zeros(xs.size)], axis=1)
    shifted = chamfer_acc_comp(plane + np.array([0.1, 0.0, 0.0]), plane)
    assert shifted.acc_mean <= 0.1 + 1e-12
    with pytest.raises(InputError):
        chamfer_acc_comp(np.zeros((0, 3)), plane)


def test_select_views():
    views = select_views(10, 3)
    assert len(views) == 3 and views[0] == 0 and views[-1] == 9
    assert select_views(5, 5).tolist() == [0, 1, 2, 3, 4]
    with pytest.raises(InputError):
        select_views(10, 2)
    with pytest.raises(InputError):
        select_views(3, 4)


def test_sparse_view_reconstruction_undoes_similarity(rng):
    gts = [rng.normal(size=(4, 4, 3)) for _ in range(3)]
    masks = [np.ones((4, 4), dtype=bool) for _ in range(3)]
    warp = Sim3(3.0, Rotation.from_euler("xyz", [0.1, 0.2, 0.3]).as_matrix(), np.array([1.0, 0.0, -1.0]))
    preds = [warp.apply(g.reshape(-1, 3)).reshape(4, 4, 3) for g in gts]
    chamfer, sim = sparse_view_reconstruction(preds, gts, masks)
    assert sim.scale == pytest.approx(1.0 / 3.0)
    assert chamfer.acc_mean == pytest.approx(0.0, abs=1e-9)
    with pytest.raises(InputError):
        sparse_view_reconstruction([], [], [])


# ----------------------------
# Report
# ----------------------------

def _perfect(frames) -> SequencePredictions:
    return SequencePredictions(
        quats=np.stack([f.quat for f in frames]),
        trans=np.stack([f.trans for f in frames]),
        points_global=np.stack([f.points_global for f in frames]),
        conf_global=np.ones((len(frames),) + frames[0].depth.shape) * 2.0,
        points_self=np.stack([f.points_self for f in frames]),
        conf_self=np.ones((len(frames),) + frames[0].depth.shape) * 2.0,
        intrinsics=np.stack([f.intrinsics for f in frames]),
        fps=12.5,
    )


def test_perfect_predictions_score_zero():
    frames = toy_frames(0, 6)
    metrics = evaluate_sequence(_perfect(frames), frames, EvalConfig(recon_views=3))
    assert metrics["frames"] == 6.0
    assert metrics["ate"] == pytest.approx(0.0, abs=1e-6)
    assert metrics["rpe_trans"] == pytest.approx(0.0, abs=1e-6)
    assert metrics["depth_abs_rel"] == pytest.approx(0.0, abs=1e-12)
    assert metrics["depth_delta_125"] == 100.0
    assert metrics["metric_abs_rel"] == pytest.approx(0.0, abs=1e-12)
    assert metrics["recon_acc_mean"] == pytest.approx(0.0, abs=1e-6)
    assert metrics["fps"] == 12.5
    with pytest.raises(InputError):
        evaluate_sequence(_perfect(frames[:5]), frames, EvalConfig())


def test_report_aggregates_finite_values(tmp_path):
    per_seq = {"a": {"ate": 1.0, "dynamic_abs_rel": float("nan")}, "b": {"ate": 3.0, "dynamic_abs_rel": 0.5}}
    agg = aggregate_metrics(per_seq)
    assert agg == {"ate": 2.0, "dynamic_abs_rel": 0.5}
    report = build_report(per_seq, {"note": "x"})
    path = tmp_path / "m" / "metrics.json"
    write_report(report, path)
    loaded = json.loads(path.read_text())
    assert loaded["schema_version"] == 1
    assert loaded["sequences"]["a"]["dynamic_abs_rel"] is None
    assert loaded["aggregate"]["ate"] == 2.0
