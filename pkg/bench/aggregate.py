from __future__ import annotations

import argparse
import csv
import glob
import math
import os
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

REQUIRED = {"seed", "variant", "metric", "value", "train_ns", "eval_ns"}


@dataclass(frozen=True)
class Row:
    seed: int
    variant: str
    metric: str
    value: Optional[float]
    train_ns: int
    eval_ns: int


def _read_rows(paths: List[str]) -> List[Row]:
    rows: List[Row] = []
    for p in paths:
        with open(p, "r", newline="") as f:
            r = csv.DictReader(f)
            if not REQUIRED.issubset(set(r.fieldnames or [])):
                missing = REQUIRED - set(r.fieldnames or [])
                raise ValueError(f"{p}: missing columns {sorted(missing)}")
            for d in r:
                raw = d["value"].strip()
                value = float(raw) if raw else None
                rows.append(
                    Row(
                        seed=int(d["seed"]),
                        variant=str(d["variant"]),
                        metric=str(d["metric"]),
                        value=value if value is None or math.isfinite(value) else None,
                        train_ns=int(d["train_ns"]),
                        eval_ns=int(d["eval_ns"]),
                    )
                )
    return rows


def _percentile(sorted_vals: List[float], q: float) -> float:
    """Nearest-rank percentile (q in [0,1])."""
    if not sorted_vals:
        raise ValueError("empty values")
    if q <= 0:
        return sorted_vals[0]
    if q >= 1:
        return sorted_vals[-1]
    k = math.ceil(q * len(sorted_vals)) - 1
    return sorted_vals[max(0, min(k, len(sorted_vals) - 1))]


def _summarize(vals: List[float]) -> Dict[str, float]:
    s = sorted(vals)
    n = len(s)
    median = s[n // 2] if n % 2 == 1 else 0.5 * (s[n // 2 - 1] + s[n // 2])
    return {
        "n": n,
        "mean": sum(s) / n,
        "median": median,
        "p95": _percentile(s, 0.95),
        "min": s[0],
        "max": s[-1],
    }


def main() -> None:
    ap = argparse.ArgumentParser(description="Summarize ablation CSVs across seeds (per variant and metric).")
    ap.add_argument("--in", dest="inputs", nargs="*", default=None, help="Input CSV files. If omitted, uses --glob.")
    ap.add_argument("--glob", dest="globpat", default="bench/outputs/ablation*.csv")
    ap.add_argument("--out", dest="out", default="bench/outputs/summary.csv")
    args = ap.parse_args()

    paths = args.inputs if args.inputs else sorted(glob.glob(args.globpat))
    paths = [p for p in paths if os.path.abspath(p) != os.path.abspath(args.out)]
    if not paths:
        raise SystemExit(f"No input CSVs found (inputs={args.inputs}, glob={args.globpat}).")
    rows = _read_rows(paths)

    groups: Dict[Tuple[str, str], List[Row]] = {}
    for x in rows:
        groups.setdefault((x.variant, x.metric), []).append(x)

    os.makedirs(os.path.dirname(args.out) or ".", exist_ok=True)
    with open(args.out, "w", newline="") as f:
        w = csv.DictWriter(
            f,
            fieldnames=["variant", "metric", "n", "missing", "mean", "median", "p95", "min", "max", "mean_train_s"],
        )
        w.writeheader()
        for (variant, metric), rs in sorted(groups.items()):
            vals = [r.value for r in rs if r.value is not None]
            stats = _summarize(vals) if vals else {k: "" for k in ("mean", "median", "p95", "min", "max")}
            w.writerow(
                {
                    "variant": variant,
                    "metric": metric,
                    "n": len(vals),
                    "missing": len(rs) - len(vals),
                    "mean": stats["mean"],
                    "median": stats["median"],
                    "p95": stats["p95"],
                    "min": stats["min"],
                    "max": stats["max"],
                    "mean_train_s": sum(r.train_ns for r in rs) / len(rs) / 1e9,
                }
            )

    print(f"Wrote: {args.out}")
    print(f"Inputs: {len(paths)} file(s); rows used: {len(rows)}; groups: {len(groups)}")


if __name__ == "__main__":
    main()
