from __future__ import annotations

import argparse
import glob
import os

try:
    import matplotlib.pyplot as plt
    import pandas as pd
    from matplotlib.patches import Patch
except Exception as e:  # pragma: no cover
    raise ImportError(
        "Figures require pandas and matplotlib. Install via: pip install -e \".[bench]\""
    ) from e

plt.rcParams.update({
    "font.size": 11,
    "axes.titlesize": 12,
    "axes.labelsize": 11,
    "legend.fontsize": 10,
    "xtick.labelsize": 10,
    "ytick.labelsize": 10,
})

OUT_DIR = "bench/figures"

VARIANT_ORDER = ["full", "no_stage2", "no_relpose", "no_tdm", "no_psm", "no_tca", "unified"]
HATCHES = {
    "full": "",
    "no_stage2": "///",
    "no_relpose": "\\\\\\",
    "no_tdm": "xx",
    "no_psm": "..",
    "no_tca": "--",
    "unified": "++",
}
LOSS_STYLES = {
    "L_conf": ("-", None),
    "L_abspose": ("--", None),
    "L_relpose": (":", None),
    "total": ("-", "o"),
}


def _save(fig, stem: str, out_dir: str):
    os.makedirs(out_dir, exist_ok=True)
    pdf_path = os.path.join(out_dir, f"{stem}.pdf")
    png_path = os.path.join(out_dir, f"{stem}.png")
    fig.savefig(pdf_path)
    fig.savefig(png_path, dpi=300)
    plt.close(fig)
    print(f"[{stem}] Saved to {pdf_path} and {png_path}")


def plot_training_curves(log_paths: list[str], out_dir: str, smooth: int = 10):
    """Loss components against step; stage-2 logs continue the stage-1 step axis."""
    frames = []
    offset = 0
    for p in log_paths:
        df = pd.read_csv(p)
        df = df[df["skipped"] == 0].copy()
        df["global_step"] = df["step"] + offset
        offset = int(df["global_step"].max()) + 1 if len(df) else offset
        frames.append(df)
    if not frames:
        return
    df = pd.concat(frames, ignore_index=True)

    fig, ax = plt.subplots(figsize=(6.5, 3.8))
    for col, (ls, mk) in LOSS_STYLES.items():
        series = df[col].rolling(max(smooth, 1), min_periods=1).mean()
        ax.plot(df["global_step"], series, linestyle=ls, marker=mk, markevery=max(len(df) // 10, 1),
                markerfacecolor="none", label=col)
    for i in range(1, len(log_paths)):
        boundary = frames[i]["global_step"].min() if len(frames[i]) else None
        if boundary is not None:
            ax.axvline(boundary, color="black", linewidth=0.8, linestyle="--")

    ax.set_yscale("log")
    ax.set_xlabel("Step")
    ax.set_ylabel("Loss")
    ax.set_title("Training Loss (rolling mean)")
    ax.legend(frameon=False)
    ax.grid(True, which="both", linestyle="--", linewidth=0.5, alpha=0.7)
    fig.tight_layout()
    _save(fig, "fig1_training_curves", out_dir)


def _apply_hatches(ax: plt.Axes, variants: list[str]):
    handles = []
    for cont in ax.containers:
        for variant, p in zip(variants, cont.patches):
            p.set_hatch(HATCHES.get(variant, ""))
            p.set_edgecolor("black")
            p.set_linewidth(0.8)
    for variant, p in zip(variants, ax.containers[0].patches if ax.containers else []):
        handles.append(Patch(facecolor=p.get_facecolor(), edgecolor="black", hatch=HATCHES.get(variant, ""), label=variant))
    ax.legend(handles=handles, title="Variant", frameon=False, fontsize=8)


def plot_ablation_bars(summary_path: str, out_dir: str):
    df = pd.read_csv(summary_path)
    order = [v for v in VARIANT_ORDER if v in set(df["variant"])]
    metrics = [("abs_rel", "Abs Rel"), ("dynamic_abs_rel", "Abs Rel (dynamic)"), ("ate", "ATE"), ("rpe_trans", "RPE trans")]

    fig, axes = plt.subplots(1, len(metrics), figsize=(12.0, 3.6))
    for ax, (metric, label) in zip(axes, metrics):
        sub = df[df["metric"] == metric].set_index("variant").reindex(order)
        sub["mean"].plot(kind="bar", ax=ax, width=0.75, color="lightgray")
        ax.set_title(label)
        ax.set_xlabel("")
        ax.set_xticklabels(ax.get_xticklabels(), rotation=45, ha="right")
        ax.grid(axis="y", linestyle="--", linewidth=0.5, alpha=0.7)
        _apply_hatches(ax, order)
        if ax is not axes[0]:
            ax.get_legend().remove()

    fig.suptitle("Ablation (mean over seeds; lower is better)")
    fig.tight_layout()
    _save(fig, "fig2_ablation", out_dir)


def main():
    ap = argparse.ArgumentParser(description="Training curves and ablation bars.")
    ap.add_argument("--summary", default="bench/outputs/summary.csv")
    ap.add_argument("--logs", nargs="*", default=None, help="Training CSVs in stage order (default: full variant of seed 0).")
    ap.add_argument("--out-dir", default=OUT_DIR)
    ap.add_argument("--smooth", type=int, default=10)
    args = ap.parse_args()

    logs = args.logs
    if logs is None:
        logs = sorted(glob.glob("bench/outputs/runs/seed0/full/train_stage*.csv"))
    if logs:
        plot_training_curves(logs, args.out_dir, args.smooth)
    if os.path.exists(args.summary):
        plot_ablation_bars(args.summary, args.out_dir)


if __name__ == "__main__":
    main()
