from __future__ import annotations

import argparse
import csv
import logging
import os
import time
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, List, Sequence

from dualmem.config import ABLATION_VARIANTS, RunConfig, load_config
from dualmem.pipeline import ABLATION_COLUMNS, ablation_row, train_variant
from dualmem.seeding import derive_seed
from scenegen import generate_scene, render_sequence

FIELDS = ["seed", "variant", "metric", "value", "train_ns", "eval_ns", "train_seqs", "eval_seqs", "steps", "stage2_steps"]


@dataclass(frozen=True)
class BenchConfig:
    seeds: List[int]
    variants: List[str]
    seqs: int
    holdout: int
    frames: int
    steps: int
    stage2_steps: int
    out: str
    workdir: str


def _timed_ns(fn: Callable[[], object]) -> tuple[int, object]:
    t0 = time.perf_counter_ns()
    value = fn()
    return time.perf_counter_ns() - t0, value


def _dataset(config: RunConfig, seed: int, n: int) -> List[list]:
    out = []
    for i in range(n):
        spec = generate_scene(derive_seed(seed, "scene", i), config.scene)
        out.append(list(render_sequence(spec).frames))
    return out


def _base_config(cfg: BenchConfig, config: RunConfig, seed: int) -> RunConfig:
    train = replace(config.train, steps=cfg.steps, stage2_steps=cfg.stage2_steps)
    scene = replace(config.scene, frames=cfg.frames)
    return replace(config, seed=seed, train=train, scene=scene).validate()


def _run_seed(w: csv.DictWriter, cfg: BenchConfig, config: RunConfig, seed: int) -> None:
    run = _base_config(cfg, config, seed)
    data = _dataset(run, seed, cfg.seqs)
    train, held = data[: -cfg.holdout], data[-cfg.holdout :]
    for variant in cfg.variants:
        run_dir = Path(cfg.workdir) / f"seed{seed}" / variant
        train_ns, model = _timed_ns(lambda: train_variant(run, variant, train, run_dir))
        eval_ns, row = _timed_ns(lambda: ablation_row(variant, model, held))
        for metric in ABLATION_COLUMNS:
            w.writerow(
                {
                    "seed": seed,
                    "variant": variant,
                    "metric": metric,
                    "value": "" if row[metric] is None else row[metric],
                    "train_ns": train_ns,
                    "eval_ns": eval_ns,
                    "train_seqs": len(train),
                    "eval_seqs": len(held),
                    "steps": cfg.steps,
                    "stage2_steps": cfg.stage2_steps,
                }
            )
        print(f"[seed {seed}] {variant}: " + ", ".join(f"{m}={row[m]}" for m in ABLATION_COLUMNS))


def _parse_variants(raw: str) -> List[str]:
    names = [v.strip() for v in raw.split(",") if v.strip()]
    bad = [v for v in names if v not in ABLATION_VARIANTS]
    if bad:
        raise ValueError(f"Unsupported variants {bad}. Supported: {', '.join(ABLATION_VARIANTS)}.")
    return names


def main(argv: Sequence[str] | None = None) -> None:
    ap = argparse.ArgumentParser(description="Seeded ablation sweep on synthetic scenes; one CSV row per seed/variant/metric.")
    ap.add_argument("--config", default=None, help="key=value config file (defaults otherwise)")
    ap.add_argument("--seeds", default="0", help="Comma-separated seeds (default: 0).")
    ap.add_argument("--variants", default="full,no_stage2,no_relpose,no_tdm,no_psm,no_tca")
    ap.add_argument("--seqs", type=int, default=10, help="Sequences generated per seed (default: 10).")
    ap.add_argument("--holdout", type=int, default=2, help="Sequences held out for evaluation (default: 2).")
    ap.add_argument("--frames", type=int, default=8)
    ap.add_argument("--steps", type=int, default=200)
    ap.add_argument("--stage2-steps", type=int, default=100)
    ap.add_argument("--out", default="bench/outputs/ablation.csv")
    ap.add_argument("--workdir", default="bench/outputs/runs", help="Checkpoints and training logs per run.")
    args = ap.parse_args(argv)

    if args.holdout < 1 or args.seqs <= args.holdout:
        raise SystemExit(f"--seqs ({args.seqs}) must exceed --holdout ({args.holdout}) >= 1")
    cfg = BenchConfig(
        seeds=[int(s) for s in args.seeds.split(",") if s.strip()],
        variants=_parse_variants(args.variants),
        seqs=args.seqs,
        holdout=args.holdout,
        frames=args.frames,
        steps=args.steps,
        stage2_steps=args.stage2_steps,
        out=args.out,
        workdir=args.workdir,
    )
    logging.basicConfig(level=logging.WARNING)
    config = load_config(args.config)

    os.makedirs(os.path.dirname(cfg.out) or ".", exist_ok=True)
    with open(cfg.out, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=FIELDS)
        w.writeheader()
        for seed in cfg.seeds:
            _run_seed(w, cfg, config, seed)
    print(f"Wrote: {cfg.out}")


if __name__ == "__main__":
    main()
