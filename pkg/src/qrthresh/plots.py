"""SVG charts built from the report CSVs (needs matplotlib).

Every chart reads only the CSV files in a run directory, so plots can be
regenerated after the fact without re-running the simulation.
"""

from __future__ import annotations

from collections import defaultdict
from pathlib import Path

import numpy as np

from .harness import read_csv

METRICS = ("bias", "rmse", "mad", "coverage")


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def plot_overlap(run_dir, path=None):
    """Violin plot of the per-iteration overlap percentage by overlap mode."""
    plt = _pyplot()
    rows = read_csv(Path(run_dir) / "overlap.csv")
    groups = defaultdict(list)
    for r in rows:
        groups[r["overlap_mode"]].append(float(r["overlap_pct"]))
    modes = sorted(groups)
    fig, ax = plt.subplots(figsize=(4, 3.5))
    ax.violinplot([groups[m] for m in modes], showmedians=True)
    ax.set_xticks(range(1, len(modes) + 1), modes)
    ax.set_xlabel("overlap mode")
    ax.set_ylabel("overlap (%)")
    path = Path(path or Path(run_dir) / "overlap.svg")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def plot_metrics(run_dir, path=None, gamma="0.05"):
    """Grouped bars of bias, RMSE, MAD and coverage per variant, one panel per mode.

    Threshold variants are shown at ``gamma``; unthresholded variants have no
    gamma and always appear.
    """
    plt = _pyplot()
    rows = [r for r in read_csv(Path(run_dir) / "report_aggregate.csv") if r["gamma"] in ("", gamma)]
    modes = sorted({r["overlap_mode"] for r in rows})
    fig, axes = plt.subplots(1, len(modes), figsize=(6 * len(modes), 4), squeeze=False)
    width = 0.8 / len(METRICS)
    for ax, mode in zip(axes[0], modes):
        sub = [r for r in rows if r["overlap_mode"] == mode]
        pos = np.arange(len(sub))
        for j, metric in enumerate(METRICS):
            vals = [float(r[metric]) if r[metric] not in ("", "nan") else np.nan for r in sub]
            ax.bar(pos + (j - 1.5) * width, vals, width, label=metric)
        ax.set_xticks(pos, [r["variant"] for r in sub], rotation=35, ha="right", fontsize=7)
        ax.axhline(0.0, color="black", linewidth=0.5)
        ax.set_title(f"overlap {mode}")
    axes[0][0].legend(fontsize=7)
    path = Path(path or Path(run_dir) / "metrics.svg")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def plot_uncertainty(run_dir, path=None, iteration="0"):
    """Per-unit 5%-95% percentile bands of the threshold statistic for one iteration."""
    plt = _pyplot()
    rows = [r for r in read_csv(Path(run_dir) / "threshold_uncertainty.csv") if r["iteration"] == iteration]
    panels = sorted({(r["overlap_mode"], r["statistic"]) for r in rows})
    if not panels:
        return None
    fig, axes = plt.subplots(1, len(panels), figsize=(4 * len(panels), 3.5), squeeze=False)
    for ax, (mode, stat) in zip(axes[0], panels):
        sub = sorted((r for r in rows if r["overlap_mode"] == mode and r["statistic"] == stat),
                     key=lambda r: float(r["mean_percentile"]))
        mid = np.array([float(r["mean_percentile"]) for r in sub])
        lo = np.array([float(r["percentile_05"]) for r in sub])
        hi = np.array([float(r["percentile_95"]) for r in sub])
        order = np.arange(mid.size)
        ax.fill_between(order, lo, hi, alpha=0.4, linewidth=0)
        ax.plot(order, mid, linewidth=0.8)
        ax.set_title(f"{stat} ({mode})", fontsize=9)
        ax.set_xlabel("unit, ordered by mean percentile")
    axes[0][0].set_ylabel("percentile across draws")
    path = Path(path or Path(run_dir) / "threshold_uncertainty.svg")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def write_plots(run_dir):
    """Write every chart into ``run_dir``; returns the written paths."""
    paths = [plot_overlap(run_dir), plot_metrics(run_dir), plot_uncertainty(run_dir)]
    return [p for p in paths if p is not None]
