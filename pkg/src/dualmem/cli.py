"""``dualmem`` command line: generate / train / stream / eval / ablate."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from .config import RunConfig, apply_overrides, load_config, parse_lines, write_resolved
from .errors import DualMemError, InputError
from .seeding import derive_seed

logger = logging.getLogger("dualmem")

EXIT_OK = 0
EXIT_ERROR = 2


def _flag_overrides(args: argparse.Namespace, mapping: Dict[str, str]) -> Dict[str, str]:
    out = {}
    for attr, key in mapping.items():
        value = getattr(args, attr, None)
        if value is not None:
            out[key] = str(value)
    return out


def _resolve(args: argparse.Namespace, flags: Optional[Dict[str, str]] = None) -> RunConfig:
    config = load_config(args.config, overrides=args.set)
    extra = dict(flags or {})
    if args.seed is not None:
        extra["seed"] = str(args.seed)
    if extra:
        config = apply_overrides(config, extra, "command line").validate()
    return config


def _out_dir(path: Optional[str], what: str) -> Path:
    if not path:
        raise InputError(f"{what}: an output path is required (--out)")
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ----------------------------
# Subcommands
# ----------------------------

def cmd_generate(args: argparse.Namespace) -> int:
    from scenegen import generate_scene, render_sequence, save_dataset

    config = _resolve(args, _flag_overrides(args, {"frames": "scene.frames", "width": "scene.width", "height": "scene.height"}))
    out = _out_dir(args.out, "generate")
    sequences = []
    for i in range(args.seqs):
        spec = generate_scene(derive_seed(config.seed, "scene", i), config.scene)
        sequences.append(render_sequence(spec))
        logger.info("sequence %d: %d frames, layout %s", i, len(sequences[-1]), spec.digest()[:12])
    save_dataset(sequences, out)
    write_resolved(config, out / "config.resolved")
    return EXIT_OK


def cmd_train(args: argparse.Namespace) -> int:
    from scenegen import load_dataset

    from .pipeline import train_stage

    config = _resolve(args, _flag_overrides(args, {"stage": "train.stage", "variant": "train.variant", "workers": "train.workers"}))
    if args.steps is not None:
        key = "train.stage2_steps" if config.train.stage == 2 else "train.steps"
        config = apply_overrides(config, {key: str(args.steps)}, "--steps").validate()
    out = _out_dir(args.out, "train")
    write_resolved(config, out / "config.resolved")
    sequences = load_dataset(Path(args.data))
    result = train_stage(
        config,
        sequences,
        init=Path(args.init_from) if args.init_from else None,
        log_path=out / f"train_stage{config.train.stage}.csv",
        progress=not args.quiet,
    )
    ckpt = out / f"stage{config.train.stage}.ckpt"
    result.save(ckpt)
    if result.skipped:
        logger.warning("%d steps skipped for non-finite losses", result.skipped)
    return EXIT_OK


def cmd_stream(args: argparse.Namespace) -> int:
    import numpy as np

    from scenegen import load_sequence

    from .export import export_point_clouds, stack_predictions, write_predictions
    from .pipeline import load_model, load_stream_state, save_stream_state, stream_sequence

    model, _ = load_model(Path(args.checkpoint), parse_lines(args.set, "--set"))
    frames = load_sequence(Path(args.sequence))
    out = _out_dir(args.out, "stream")
    write_resolved(model.config, out / "config.resolved")
    state = load_stream_state(Path(args.resume)) if args.resume else None
    start = state.t if state is not None else 0
    images = [f.image for f in frames[start:]]
    result = stream_sequence(model, images, state=state, progress=not args.quiet)
    if not result.predictions:
        raise InputError(f"{args.sequence}: nothing to stream after frame {start}")
    preds = stack_predictions(result.predictions, result.fps)
    write_predictions(out / "predictions", preds, np.array([p.fov_y.item() for p in result.predictions]))
    threshold = args.conf_threshold if args.conf_threshold is not None else model.config.eval.conf_threshold
    export_point_clouds(out / "ply", preds, images, threshold, per_frame=args.export_per_frame)
    if args.save_state:
        save_stream_state(out / "stream_state.dmck", result.state)
    logger.info("streamed %d frames at %.2f FPS", len(result.predictions), result.fps)
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    from evalkit import build_report, evaluate_sequence, write_report
    from scenegen import load_sequence

    from .export import read_predictions

    config = _resolve(args, _flag_overrides(args, {"keyframe_stride": "eval.keyframe_stride", "alignment": "eval.depth_alignment"}))
    gt_path = Path(args.gt)
    if not gt_path.exists():
        raise InputError(f"ground-truth sequence not found: {gt_path}")
    preds = read_predictions(Path(args.predictions))
    frames = load_sequence(gt_path)
    if len(preds) < len(frames):
        frames = frames[len(frames) - len(preds):]
    metrics = evaluate_sequence(preds, frames, config.eval)
    report = build_report({gt_path.name: metrics}, {"predictions": str(args.predictions), "gt": str(gt_path)})
    out = Path(args.out) if args.out else Path(args.predictions) / "metrics.json"
    write_report(report, out)
    for key in ("ate", "rpe_trans", "rpe_rot", "depth_abs_rel", "depth_delta_125", "metric_abs_rel"):
        if key in metrics:
            logger.info("%s = %.6g", key, metrics[key])
    return EXIT_OK


DEFAULT_VARIANTS = ("full", "no_stage2", "no_relpose", "no_tdm", "no_psm", "no_tca")


def cmd_ablate(args: argparse.Namespace) -> int:
    from scenegen import load_dataset

    from .pipeline import run_ablation

    config = _resolve(args, _flag_overrides(args, {"steps": "train.steps", "stage2_steps": "train.stage2_steps"}))
    out = _out_dir(args.out, "ablate")
    write_resolved(config, out / "config.resolved")
    train = load_dataset(Path(args.data))
    if args.eval_data:
        held = load_dataset(Path(args.eval_data))
    else:
        n = config.eval.holdout
        if len(train) <= n:
            raise InputError(f"{args.data}: {len(train)} sequences leave none for training after holding out {n}")
        train, held = train[:-n], train[-n:]
    variants: Sequence[str] = [v for v in args.variants.split(",") if v] if args.variants else DEFAULT_VARIANTS
    report = run_ablation(config, train, held, variants, workdir=out / "runs", progress=not args.quiet)
    (out / "ablation.json").write_text(json.dumps(report.to_json(), indent=2))
    (out / "ablation.txt").write_text(report.to_text())
    sys.stdout.write(report.to_text())
    return EXIT_OK


# ----------------------------
# Parser
# ----------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=str, default=None, help="key=value config file")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="config override (repeatable)")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--log-level", type=str, default="INFO")
    common.add_argument("--quiet", action="store_true", help="hide progress bars")

    ap = argparse.ArgumentParser(prog="dualmem", description="Dual-memory streaming 4D reconstruction prototype.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", parents=[common], help="render a synthetic dataset")
    p.add_argument("--out", type=str, default=None)
    p.add_argument("--seqs", type=int, default=8)
    p.add_argument("--frames", type=int, default=None)
    p.add_argument("--width", type=int, default=None)
    p.add_argument("--height", type=int, default=None)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", parents=[common], help="run one curriculum stage")
    p.add_argument("--data", type=str, required=True)
    p.add_argument("--out", type=str, default=None)
    p.add_argument("--stage", type=int, choices=(1, 2), default=None)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--init-from", type=str, default=None, help="stage-1 checkpoint (required for stage 2)")
    p.add_argument("--variant", type=str, default=None)
    p.add_argument("--workers", type=int, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("stream", parents=[common], help="stream a sequence through a checkpoint")
    p.add_argument("--checkpoint", type=str, required=True)
    p.add_argument("--sequence", type=str, required=True)
    p.add_argument("--out", type=str, default=None)
    p.add_argument("--export-per-frame", action="store_true")
    p.add_argument("--conf-threshold", type=float, default=None)
    p.add_argument("--resume", type=str, default=None, help="stream state saved by --save-state")
    p.add_argument("--save-state", action="store_true")
    p.set_defaults(func=cmd_stream)

    p = sub.add_parser("eval", parents=[common], help="score predictions against ground truth")
    p.add_argument("--predictions", type=str, required=True)
    p.add_argument("--gt", type=str, required=True)
    p.add_argument("--out", type=str, default=None)
    p.add_argument("--keyframe-stride", type=int, default=None)
    p.add_argument("--alignment", type=str, default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", parents=[common], help="train and compare ablation variants")
    p.add_argument("--data", type=str, required=True)
    p.add_argument("--eval-data", type=str, default=None)
    p.add_argument("--out", type=str, default=None)
    p.add_argument("--variants", type=str, default=None, help="comma-separated; default: " + ",".join(DEFAULT_VARIANTS))
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--stage2-steps", type=int, default=None)
    p.set_defaults(func=cmd_ablate)
    return ap


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(), format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (DualMemError, OSError) as exc:
        logger.error("%s failed: %s", args.command, exc)
        return EXIT_ERROR


if __name__ == "__main__":
    raise SystemExit(main())
