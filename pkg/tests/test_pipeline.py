from __future__ import annotations

import json

import numpy as np
import pytest

from toys import toy_config, toy_frames

from dualmem.config import ABLATION_VARIANTS, variant_config
from dualmem.errors import ConfigError, InputError
from dualmem.model import build_model
from dualmem.pipeline import (
    ABLATION_COLUMNS,
    LOG_COLUMNS,
    clip_gradients,
    format_metric,
    ground_truth,
    initial_state,
    load_model,
    load_stream_state,
    process_frame,
    restore_optimizer,
    run_ablation,
    sample_clip,
    save_stream_state,
    stream_sequence,
    train_stage,
)
from dualmem.seeding import make_rng


def _model(variant: str = "full"):
    return build_model(variant_config(toy_config(), variant))


def _images(n: int = 6):
    return [f.image for f in toy_frames(frames=6)[:n]]


def _assert_same_predictions(a, b):
    assert len(a) == len(b)
    for p, q in zip(a, b):
        assert p.frame_index == q.frame_index
        for x, y in zip(p.tensors(), q.tensors()):
            np.testing.assert_array_equal(x.data, y.data)


# ----------------------------
# Streaming state machine
# ----------------------------

def test_cold_start_reads_no_memory_and_anchors_first_frame():
    model = _model()
    state = initial_state(model)
    assert state.t == 0 and len(state.history) == 0 and state.recent == () and len(state.memory) == 0

    pred, state = process_frame(model, state, _images(1)[0])
    assert pred.frame_index == 0
    assert pred.points_global.shape == (16, 16, 3)
    assert pred.conf_global.shape == (16, 16)
    assert pred.trace == ["M", "S"]
    assert state.t == 1
    assert state.memory.frame_indices == [0]
    assert state.memory.anchor is not None


def test_memory_sizes_follow_capacities():
    model = _model()
    cfg = model.config
    state = initial_state(model)
    for t, image in enumerate(_images(6), start=1):
        _, state = process_frame(model, state, image)
        assert state.t == t
        assert len(state.memory) == min(t, cfg.psm.capacity)
        assert len(state.history) == min(t, cfg.tca.window)
        assert len(state.recent) == min(t, cfg.tdm.window)
        assert state.memory.frame_indices[0] == 0


def test_prefix_predictions_do_not_depend_on_later_frames():
    model = _model()
    full = stream_sequence(model, _images(6)).predictions
    prefix = stream_sequence(model, _images(3)).predictions
    _assert_same_predictions(prefix, full[:3])


def test_streaming_is_deterministic_across_model_rebuilds():
    a = stream_sequence(_model(), _images(4)).predictions
    b = stream_sequence(_model(), _images(4)).predictions
    _assert_same_predictions(a, b)


def test_resumed_stream_matches_uninterrupted_stream(tmp_path):
    model = _model()
    images = _images(6)
    full = stream_sequence(model, images).predictions

    first = stream_sequence(model, images[:3])
    path = tmp_path / "state.dmck"
    save_stream_state(path, first.state)
    restored = load_stream_state(path)
    assert restored.t == 3
    assert restored.memory.frame_indices == first.state.memory.frame_indices
    rest = stream_sequence(model, images[3:], state=restored).predictions
    _assert_same_predictions(first.predictions + rest, full)


def test_stream_state_file_kind_is_checked(tmp_path):
    from dualmem.codec import save_container

    path = tmp_path / "other.dmck"
    save_container(path, {"x": np.zeros(2)}, {"kind": "frame"})
    with pytest.raises(InputError):
        load_stream_state(path)


@pytest.mark.parametrize("shape", [(8, 16, 3), (16, 16), (16, 16, 4)])
def test_wrong_image_shape_is_rejected(shape):
    model = _model()
    with pytest.raises(InputError):
        process_frame(model, initial_state(model), np.zeros(shape))


def test_stream_fps_is_reported():
    res = stream_sequence(_model(), _images(2))
    assert len(res.predictions) == 2
    assert res.fps > 0


# ----------------------------
# Variants
# ----------------------------

def test_every_variant_builds_the_same_parameter_registry():
    reference = _model("full").state_dict()
    for variant in ABLATION_VARIANTS:
        state = _model(variant).state_dict()
        assert sorted(state) == sorted(reference), variant
        for name, value in reference.items():
            np.testing.assert_array_equal(state[name], value)


@pytest.mark.parametrize(
    "variant,trace",
    [("full", ["M", "S"]), ("no_tdm", ["S"]), ("no_psm", ["M"]), ("unified", ["S"]), ("no_tca", ["M", "S"])],
)
def test_variant_readout_traces(variant, trace):
    preds = stream_sequence(_model(variant), _images(3)).predictions
    assert all(p.trace == trace for p in preds)


def test_disabled_memories_stay_empty():
    images = _images(3)
    assert len(stream_sequence(_model("no_psm"), images).state.memory) == 0
    assert len(stream_sequence(_model("no_tca"), images).state.history) == 0
    assert stream_sequence(_model("no_tdm"), images).state.recent == ()
    # unified memory still builds motion entries
    assert len(stream_sequence(_model("unified"), images).state.recent) == 2


def test_removing_a_memory_changes_later_predictions():
    images = _images(3)
    full = stream_sequence(_model("full"), images).predictions
    no_psm = stream_sequence(_model("no_psm"), images).predictions
    assert not np.allclose(full[2].points_global.data, no_psm[2].points_global.data)


# ----------------------------
# Training
# ----------------------------

def test_sample_clip_respects_length_range():
    rng = make_rng(0, "clips")
    lengths = [6, 3, 10]
    for _ in range(200):
        seq, start, length = sample_clip(rng, lengths, 2, 5)
        assert 2 <= length <= 5
        assert 0 <= start and start + length <= lengths[seq]


def test_sample_clip_without_long_enough_sequence():
    with pytest.raises(InputError):
        sample_clip(make_rng(0, "clips"), [2, 3], 4, 4)


def test_ground_truth_carries_frame_fields():
    frames = toy_frames()[:2]
    gt = ground_truth(frames)
    assert len(gt) == 2
    np.testing.assert_array_equal(gt[1].points_global, frames[1].points_global)
    assert gt[0].valid.dtype == bool


def test_clip_gradients_are_finite_and_named():
    model = _model()
    scalars, grads = clip_gradients(model, toy_frames()[:2])
    assert set(scalars) >= {"L_conf", "L_abspose", "L_relpose", "total"}
    assert np.isfinite(scalars["total"])
    names = dict(model.named_parameters())
    assert grads and set(grads) <= set(names)
    for name, g in grads.items():
        assert g.shape == names[name].shape
        assert np.all(np.isfinite(g))
    assert any(np.any(g != 0) for g in grads.values())


def test_stage_two_requires_a_stage_one_checkpoint():
    cfg = toy_config(stage=2)
    with pytest.raises(ConfigError):
        train_stage(cfg, [toy_frames()], progress=False)


def test_training_needs_sequences():
    with pytest.raises(InputError):
        train_stage(toy_config(), [], progress=False)


def test_zero_step_checkpoint_reproduces_initialisation(tmp_path):
    cfg = toy_config(steps=0)
    result = train_stage(cfg, [toy_frames()], progress=False)
    assert result.log == []
    path = tmp_path / "stage1.ckpt"
    result.save(path)

    model, meta = load_model(path)
    assert meta["stage"] == 1 and meta["steps"] == 0
    fresh = build_model(cfg).state_dict()
    loaded = model.state_dict()
    assert sorted(loaded) == sorted(fresh)
    for name, value in fresh.items():
        np.testing.assert_array_equal(loaded[name], value)


@pytest.mark.slow
def test_two_stage_training_writes_logs_and_checkpoints(tmp_path):
    frames = toy_frames()
    stage1 = train_stage(toy_config(), [frames], log_path=tmp_path / "s1.csv", progress=False)
    assert len(stage1.log) == 2
    assert all(set(LOG_COLUMNS) <= set(row) for row in stage1.log)
    header = (tmp_path / "s1.csv").read_text().splitlines()[0]
    assert header.split(",") == list(LOG_COLUMNS)

    ckpt = tmp_path / "stage1.ckpt"
    stage1.save(ckpt)
    opt = restore_optimizer(ckpt, load_model(ckpt)[0])
    assert opt.state.step == sum(1 for row in stage1.log if row["skipped"] == 0)

    before = stage1.model.state_dict()
    assert any(
        not np.array_equal(before[k], v) for k, v in build_model(toy_config()).state_dict().items()
    )

    stage2 = train_stage(toy_config(stage=2), [frames], init=ckpt, progress=False)
    assert len(stage2.log) == 2
    assert stage2.model.config.train.stage == 2


# ----------------------------
# Ablation
# ----------------------------

def test_unknown_ablation_variant():
    with pytest.raises(ConfigError):
        run_ablation(toy_config(), [toy_frames()], [toy_frames(seed=1)], ["full", "no_memory"])


def test_format_metric():
    assert format_metric(None) == "nan"
    assert format_metric(float("nan")) == "nan"
    assert format_metric(0.5) == "0.5"
    assert format_metric(1.23456789) == "1.23457"


@pytest.mark.slow
def test_ablation_report_schema(tmp_path):
    cfg = toy_config(steps=1, stage2_steps=1)
    report = run_ablation(cfg, [toy_frames()], [toy_frames(seed=1)], ["full", "no_tdm"], workdir=tmp_path)
    doc = json.loads(json.dumps(report.to_json()))
    assert doc["schema_version"] == 1
    assert doc["columns"] == ["variant", *ABLATION_COLUMNS, "trace"]
    assert [r["variant"] for r in doc["rows"]] == ["full", "no_tdm"]
    assert doc["rows"][0]["trace"] == "MS"
    assert "M" not in doc["rows"][1]["trace"]
    assert (tmp_path / "full" / "stage2.ckpt").exists()

    lines = report.to_text().splitlines()
    assert lines[0].split() == ["variant", *ABLATION_COLUMNS]
    for row, line in zip(doc["rows"], lines[2:]):
        cells = line.split()
        assert cells[0] == row["variant"]
        assert cells[1:] == [format_metric(row[c]) for c in ABLATION_COLUMNS]


@pytest.mark.slow
def test_no_stage2_variant_skips_the_second_stage(tmp_path):
    cfg = toy_config(steps=1, stage2_steps=1)
    run_ablation(cfg, [toy_frames()], [toy_frames(seed=1)], ["no_stage2"], workdir=tmp_path)
    assert (tmp_path / "no_stage2" / "train_stage1.csv").exists()
    assert not (tmp_path / "no_stage2" / "train_stage2.csv").exists()
