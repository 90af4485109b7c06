"""Streaming inference, two-stage curriculum training and the ablation runner."""

from __future__ import annotations

import csv
import dataclasses
import logging
import tempfile
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from tqdm import tqdm

from evalkit.report import SequencePredictions, aggregate_metrics, evaluate_sequence

from . import tensor as T
from .codec import load_checkpoint, load_container, save_checkpoint, save_container
from .config import ABLATION_VARIANTS, RunConfig, apply_overrides, stage_window, to_flat, variant_config
from .decoder import FramePrediction, decode_frame
from .errors import ConfigError, InputError, StreamError, TrainingAborted
from .export import stack_predictions
from .interfaces import Clip
from .loss import GroundTruthFrame, sequence_loss
from .model import DualMemoryModel, build_model
from .nn import AdamW, OptimizerState, TokenGrid
from .psm import PersistentStructureMemory, compress_for_readout, encode_structure, memory_arrays, memory_from_arrays
from .seeding import make_rng
from .tca import HistoryWindow, aggregate, history_arrays, history_from_arrays
from .tdm import build_tdm

logger = logging.getLogger(__name__)

LOG_COLUMNS = ("step", "L_conf", "L_abspose", "L_relpose", "total", "lr", "skipped")
ABLATION_COLUMNS = ("ate", "rpe_trans", "rpe_rot", "abs_rel", "delta_125", "dynamic_abs_rel")


# ----------------------------
# Stream state
# ----------------------------

@dataclass(frozen=True)
class StreamState:
    """Everything the stream remembers; ``t`` counts processed frames."""

    t: int
    history: HistoryWindow
    recent: Tuple[TokenGrid, ...]
    memory: PersistentStructureMemory
    recent_capacity: int

    def to_arrays(self) -> Dict[str, np.ndarray]:
        out = {"meta": np.array([self.t, self.history.capacity, self.recent_capacity, self.memory.capacity], dtype=np.int64)}
        out.update({f"history/{k}": v for k, v in history_arrays(self.history).items()})
        out.update({f"memory/{k}": v for k, v in memory_arrays(self.memory).items()})
        for i, g in enumerate(self.recent):
            out[f"recent/{i}.tokens"] = g.tokens.data
            out[f"recent/{i}.positions"] = g.positions
            out[f"recent/{i}.extents"] = np.array(g.extents, dtype=np.int64)
        return out

    @classmethod
    def from_arrays(cls, arrays: Mapping[str, np.ndarray]) -> "StreamState":
        t, k_t, k_d, k_s = (int(v) for v in arrays["meta"])

        def section(prefix: str) -> Dict[str, np.ndarray]:
            return {k[len(prefix):]: v for k, v in arrays.items() if k.startswith(prefix)}

        recent_raw = section("recent/")
        recent = []
        i = 0
        while f"{i}.tokens" in recent_raw:
            h, w = (int(v) for v in recent_raw[f"{i}.extents"])
            recent.append(TokenGrid(T.Tensor(recent_raw[f"{i}.tokens"]), recent_raw[f"{i}.positions"], (h, w)))
            i += 1
        return cls(
            t=t,
            history=history_from_arrays(k_t, section("history/")),
            recent=tuple(recent),
            memory=memory_from_arrays(k_s, section("memory/")),
            recent_capacity=k_d,
        )


def initial_state(model: DualMemoryModel) -> StreamState:
    c = model.config
    return StreamState(0, HistoryWindow(c.tca.window), (), PersistentStructureMemory(c.psm.capacity), c.tdm.window)


def save_stream_state(path: Path, state: StreamState) -> None:
    save_container(path, state.to_arrays(), {"kind": "stream_state"})


def load_stream_state(path: Path) -> StreamState:
    arrays, meta = load_container(path)
    if meta.get("kind") != "stream_state":
        raise InputError(f"{path}: not a stream state (kind={meta.get('kind')!r})")
    return StreamState.from_arrays(arrays)


def process_frame(model: DualMemoryModel, state: StreamState, image) -> Tuple[FramePrediction, StreamState]:
    """Predict frame ``state.t`` from ``image`` and the past held in ``state``."""
    h, w = model.image_size
    image = T.as_tensor(image)
    if image.shape != (h, w, 3):
        raise InputError(f"frame {state.t}: image {image.shape} does not match configured ({h}, {w}, 3)")
    idx = state.t
    wiring = model.wiring

    tokens = model.encoder(image)
    enriched = aggregate(tokens, state.history, model.tca) if wiring.use_tca else tokens
    motion = build_tdm(enriched, state.recent, model.tdm).joined() if wiring.builds_motion else None
    structure = None
    if wiring.use_psm and len(state.memory):
        structure = compress_for_readout(state.memory, idx, model.psm)
    pred = decode_frame(
        enriched, idx, motion, structure, model.decoder, model.image_size,
        use_motion=wiring.motion_read, use_structure=wiring.use_psm,
    )
    if not T.all_finite(pred.tensors()):
        raise StreamError("non-finite values in prediction", frame_index=idx)

    memory = state.memory
    if wiring.use_psm:
        memory = memory.push(encode_structure(pred.points_global, idx, model.psm))
    history = state.history.push(idx, tokens) if wiring.use_tca else state.history
    recent = state.recent
    if wiring.builds_motion and state.recent_capacity > 0:
        recent = ((enriched,) + recent)[: state.recent_capacity]
    return pred, StreamState(idx + 1, history, recent, memory, state.recent_capacity)


@dataclass
class StreamResult:
    predictions: List[FramePrediction]
    state: StreamState
    seconds: float

    @property
    def fps(self) -> float:
        return len(self.predictions) / self.seconds if self.seconds > 0 else float("inf")


def stream_sequence(
    model: DualMemoryModel,
    images: Sequence[np.ndarray],
    state: Optional[StreamState] = None,
    progress: bool = False,
) -> StreamResult:
    """Run ``images`` through the stream; returned predictions are detached."""
    state = initial_state(model) if state is None else state
    preds: List[FramePrediction] = []
    start = time.perf_counter()
    for image in tqdm(images, desc="stream", disable=not progress, leave=False):
        pred, state = process_frame(model, state, image)
        preds.append(pred.detached())
    return StreamResult(preds, state, time.perf_counter() - start)


# ----------------------------
# Training
# ----------------------------

def ground_truth(frames: Clip) -> List[GroundTruthFrame]:
    return [
        GroundTruthFrame(f.points_global, f.points_self, np.asarray(f.valid, dtype=bool), f.quat, f.trans, f.intrinsics, f.dynamic)
        for f in frames
    ]


def sample_clip(rng: np.random.Generator, lengths: Sequence[int], lo: int, hi: int) -> Tuple[int, int, int]:
    """``(sequence index, start frame, clip length)`` with length uniform in ``[lo, hi]``."""
    length = int(rng.integers(lo, hi + 1))
    eligible = [i for i, n in enumerate(lengths) if n >= length]
    if not eligible:
        raise InputError(f"no training sequence has {length} frames")
    seq = eligible[int(rng.integers(len(eligible)))]
    start = int(rng.integers(0, lengths[seq] - length + 1))
    return seq, start, length


def clip_gradients(model: DualMemoryModel, frames: Clip) -> Tuple[Dict[str, float], Optional[Dict[str, np.ndarray]]]:
    """Unroll one clip with gradients; returns loss scalars and per-parameter gradients.

    Gradients are ``None`` when the loss or any prediction is non-finite.
    """
    cfg = model.config.loss
    weights = (cfg.w_conf, cfg.w_abspose, cfg.w_relpose)
    with T.GradientTape() as tape:
        state = initial_state(model)
        preds = []
        try:
            for f in frames:
                pred, state = process_frame(model, state, f.image)
                preds.append(pred)
        except StreamError as exc:
            logger.warning("clip produced non-finite predictions: %s", exc)
            return {k: float("nan") for k in LOG_COLUMNS[1:5]}, None
        parts = sequence_loss(preds, ground_truth(frames), cfg.alpha, cfg.beta, weights, cfg.reduction)
    scalars = parts.scalars()
    if not np.isfinite(scalars["total"]):
        return scalars, None
    grads = tape.backward(parts.total)
    return scalars, {name: grads[p] for name, p in model.named_parameters() if p in grads}


@dataclass
class TrainResult:
    model: DualMemoryModel
    optimizer: AdamW
    log: List[Dict[str, float]] = field(default_factory=list)
    skipped: int = 0

    def save(self, path: Path) -> None:
        cfg = self.model.config
        save_checkpoint(
            path,
            self.model.state_dict(),
            self.optimizer.state.state_dict(),
            {
                "config": to_flat(cfg),
                "optimizer": self.optimizer.state.scalars(),
                "stage": cfg.train.stage,
                "variant": cfg.train.variant,
                "steps": len(self.log),
            },
        )
        logger.info("checkpoint written to %s", path)


def load_model(path: Path, overrides: Optional[Mapping[str, str]] = None) -> Tuple[DualMemoryModel, Dict[str, Any]]:
    """Rebuild the model a checkpoint was trained with and load its parameters."""
    params, _, meta = load_checkpoint(path)
    config = apply_overrides(RunConfig(), meta.get("config", {}), str(path))
    if overrides:
        config = apply_overrides(config, overrides)
    model = build_model(config.validate())
    model.load_state_dict(params)
    return model, meta


def _reduce_grads(results: Sequence[Dict[str, np.ndarray]]) -> Dict[str, np.ndarray]:
    out: Dict[str, np.ndarray] = {}
    for grads in results:
        for name, g in grads.items():
            out[name] = out[name] + g if name in out else g.copy()
    n = float(len(results))
    return {k: v / n for k, v in out.items()}


def train_stage(
    config: RunConfig,
    sequences: Sequence[Clip],
    init: Optional[Path] = None,
    log_path: Optional[Path] = None,
    progress: bool = True,
) -> TrainResult:
    """Run one curriculum stage; stage 2 resumes from the checkpoint at ``init``."""
    config = variant_config(config.validate(), config.train.variant)
    tc = config.train
    if tc.stage == 2 and init is None:
        raise ConfigError("stage 2 resumes from a stage-1 checkpoint; pass one via --init-from")
    if not sequences:
        raise InputError("training needs at least one sequence")
    model = build_model(config)
    if init is not None:
        params, _, _ = load_checkpoint(init)
        model.load_state_dict(params)
    steps = tc.steps if tc.stage == 1 else tc.stage2_steps
    opt = AdamW(
        model, tc.lr, total_steps=steps, warmup_steps=int(round(tc.warmup_frac * steps)),
        weight_decay=tc.weight_decay, betas=(tc.beta1, tc.beta2),
    )
    lengths = [len(s) for s in sequences]
    lo, hi = stage_window(config)
    if max(lengths) < lo:
        raise InputError(f"longest training sequence has {max(lengths)} frames; stage {tc.stage} needs {lo}")
    if max(lengths) < hi:
        logger.warning("clip lengths capped at %d frames (configured up to %d)", max(lengths), hi)
        hi = max(lengths)

    rng = make_rng(config.seed, "train", tc.stage, tc.variant)
    result = TrainResult(model, opt)
    writer = None
    handle = None
    if log_path is not None:
        log_path = Path(log_path)
        log_path.parent.mkdir(parents=True, exist_ok=True)
        handle = open(log_path, "w", newline="")
        writer = csv.DictWriter(handle, fieldnames=list(LOG_COLUMNS))
        writer.writeheader()

    bad = 0
    pool = ThreadPoolExecutor(max_workers=tc.workers) if tc.workers > 1 else None
    try:
        for step in tqdm(range(steps), desc=f"stage {tc.stage} [{tc.variant}]", disable=not progress):
            clips = []
            for _ in range(tc.batch_size):
                seq, start, length = sample_clip(rng, lengths, lo, hi)
                clips.append(sequences[seq][start : start + length])
            runner: Callable = lambda clip: clip_gradients(model, clip)
            outs = list(pool.map(runner, clips)) if pool is not None else [runner(c) for c in clips]

            lr = opt.lr
            row: Dict[str, float] = {"step": step, "lr": lr}
            for key in LOG_COLUMNS[1:5]:
                row[key] = float(np.mean([o[0][key] for o in outs]))
            if any(o[1] is None for o in outs):
                bad += 1
                result.skipped += 1
                row["skipped"] = 1
                logger.warning("step %d: non-finite loss, update skipped (%d in a row)", step, bad)
                if bad >= tc.nan_patience:
                    raise TrainingAborted(f"{bad} consecutive non-finite losses at step {step}")
            else:
                bad = 0
                grads = _reduce_grads([o[1] for o in outs])
                params = dict(model.named_parameters())
                row["skipped"] = int(not opt.step({params[k]: g for k, g in grads.items()}))
            result.log.append(row)
            if writer is not None:
                writer.writerow(row)
            if step % max(tc.log_every, 1) == 0:
                logger.info(
                    "stage %d step %d: total=%.4f conf=%.4f abs=%.4f rel=%.4f lr=%.2e",
                    tc.stage, step, row["total"], row["L_conf"], row["L_abspose"], row["L_relpose"], lr,
                )
    finally:
        if pool is not None:
            pool.shutdown()
        if handle is not None:
            handle.close()
    return result


def restore_optimizer(path: Path, model: DualMemoryModel) -> AdamW:
    """Optimizer bound to ``model`` with moments and step restored from a checkpoint."""
    _, optim, meta = load_checkpoint(path)
    opt = AdamW(model, 1.0, total_steps=1)
    opt.state = OptimizerState.restore(meta["optimizer"], optim)
    return opt


# ----------------------------
# Evaluation and ablation
# ----------------------------

def predict_sequence(model: DualMemoryModel, frames: Clip) -> Tuple[SequencePredictions, List[FramePrediction]]:
    res = stream_sequence(model, [f.image for f in frames])
    return stack_predictions(res.predictions, res.fps), res.predictions


def evaluate_model(model: DualMemoryModel, sequences: Sequence[Clip]) -> Dict[str, Dict[str, float]]:
    out = {}
    for i, frames in enumerate(sequences):
        preds, _ = predict_sequence(model, frames)
        out[f"seq_{i:04d}"] = evaluate_sequence(preds, frames, model.config.eval)
    return out


@dataclass
class AblationReport:
    rows: List[Dict[str, Any]]

    def to_json(self) -> Dict[str, Any]:
        return {"schema_version": 1, "columns": ["variant", *ABLATION_COLUMNS, "trace"], "rows": self.rows}

    def to_text(self) -> str:
        header = f"{'variant':<12}" + "".join(f"{c:>16}" for c in ABLATION_COLUMNS)
        lines = [header, "-" * len(header)]
        for r in self.rows:
            lines.append(f"{r['variant']:<12}" + "".join(f"{format_metric(r[c]):>16}" for c in ABLATION_COLUMNS))
        return "\n".join(lines) + "\n"


def format_metric(value: Optional[float]) -> str:
    if value is None or not np.isfinite(value):
        return "nan"
    return f"{value:.6g}"


def run_ablation(
    config: RunConfig,
    train_sequences: Sequence[Clip],
    eval_sequences: Sequence[Clip],
    variants: Sequence[str] = (),
    workdir: Optional[Path] = None,
    progress: bool = False,
) -> AblationReport:
    """Train and evaluate each variant with the same seed, steps and data.

    Checkpoints and training logs go under ``workdir/<variant>`` (a scratch
    directory when ``workdir`` is omitted).
    """
    variants = list(variants) or ["full"]
    unknown = [v for v in variants if v not in ABLATION_VARIANTS]
    if unknown:
        raise ConfigError(f"unknown ablation variants {unknown}; expected a subset of {ABLATION_VARIANTS}")
    if not eval_sequences:
        raise InputError("ablation needs at least one evaluation sequence")
    rows = []
    with tempfile.TemporaryDirectory(prefix="dualmem-ablate-") as scratch:
        root = Path(workdir) if workdir is not None else Path(scratch)
        for variant in variants:
            model = train_variant(config, variant, train_sequences, root / variant, progress)
            rows.append(ablation_row(variant, model, eval_sequences))
            logger.info("variant %s: %s", variant, {k: rows[-1][k] for k in ABLATION_COLUMNS})
    return AblationReport(rows)


def train_variant(config: RunConfig, variant: str, sequences: Sequence[Clip], run_dir: Path, progress: bool = False) -> DualMemoryModel:
    """Stage 1, then stage 2 from the stage-1 checkpoint unless the variant drops it."""
    vc = variant_config(config, variant)
    stage1 = dataclasses.replace(vc, train=dataclasses.replace(vc.train, stage=1))
    result = train_stage(stage1, sequences, log_path=run_dir / "train_stage1.csv", progress=progress)
    if variant == "no_stage2":
        return result.model
    ckpt = run_dir / "stage1.ckpt"
    result.save(ckpt)
    stage2 = dataclasses.replace(vc, train=dataclasses.replace(vc.train, stage=2))
    result = train_stage(stage2, sequences, init=ckpt, log_path=run_dir / "train_stage2.csv", progress=progress)
    result.save(run_dir / "stage2.ckpt")
    return result.model


def ablation_row(variant: str, model: DualMemoryModel, sequences: Sequence[Clip]) -> Dict[str, Any]:
    metrics = aggregate_metrics(evaluate_model(model, sequences))
    _, sample = predict_sequence(model, sequences[0][:1])

    def finite(key: str) -> Optional[float]:
        v = metrics.get(key)
        return float(v) if v is not None and np.isfinite(v) else None

    return {
        "variant": variant,
        "ate": finite("ate"),
        "rpe_trans": finite("rpe_trans"),
        "rpe_rot": finite("rpe_rot"),
        "abs_rel": finite("depth_abs_rel"),
        "delta_125": finite("depth_delta_125"),
        "dynamic_abs_rel": finite("dynamic_abs_rel"),
        "trace": "".join(sample[0].trace),
    }
