"""Figures written next to the CSV reports. Uses the non-interactive Agg backend."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "figure.figsize": (6.0, 3.6),
    "figure.dpi": 120,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "font.size": 9,
    "legend.frameon": False,
}
SPLIT_COLORS = {"many": "#1f77b4", "medium": "#ff7f0e", "few": "#2ca02c"}


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def plot_norms(path, norms_by_stage, splits=None):
    """Per-class classifier weight norms for each stage, plus the centroid norms.

    ``norms_by_stage`` maps a stage name to a NormReport.
    """
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        stages = list(norms_by_stage)
        k = len(next(iter(norms_by_stage.values())).weight_norms)
        width = 0.8 / (len(stages) + 1)
        x = np.arange(k)
        for i, stage in enumerate(stages):
            ax.bar(x + i * width, norms_by_stage[stage].weight_norms, width, label=f"weight ({stage})")
        centroid = norms_by_stage[stages[-1]].centroid_norms
        ax.bar(x + len(stages) * width, centroid, width, label="centroid", color="0.6")
        ax.set_xticks(x + width * len(stages) / 2)
        ax.set_xticklabels([str(c) for c in range(k)])
        if splits is not None:
            for tick, split in zip(ax.get_xticklabels(), splits):
                tick.set_color(SPLIT_COLORS.get(split, "k"))
        ax.set_xlabel("class (sorted by training frequency)")
        ax.set_ylabel("L2 norm")
        ax.legend(fontsize=7)
        return _save(fig, path)


def plot_split_accuracy(path, reports):
    """Grouped bars of overall/many/medium/few accuracy; ``reports`` maps label -> SplitReport."""
    metrics = ("overall", "many", "medium", "few")
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        width = 0.8 / max(len(reports), 1)
        x = np.arange(len(metrics))
        for i, (label, rep) in enumerate(reports.items()):
            vals = [np.nan if rep.metric(m) is None else 100 * rep.metric(m) for m in metrics]
            ax.bar(x + i * width, vals, width, label=label)
        ax.set_xticks(x + width * (len(reports) - 1) / 2)
        ax.set_xticklabels(metrics)
        ax.set_ylabel("top-1 accuracy (%)")
        ax.set_ylim(0, 100)
        ax.legend(fontsize=7)
        return _save(fig, path)


def plot_loss_curves(path, report):
    """Per-epoch loss terms from a RunReport, one line per stage.term."""
    series = {}
    for stage, epoch, term, value in report.rows:
        if term in ("lr", "wall_time"):
            continue
        series.setdefault(f"{stage}.{term}", []).append((epoch, value))
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        offset = 1 + max((e for s, e, t, v in report.rows if s == "stage1"), default=-1)
        for name, pts in series.items():
            e, v = np.array(pts).T
            if name.startswith("stage2."):
                e = e + offset
            ax.plot(e, v, label=name, lw=1.2)
        ax.set_xlabel("epoch")
        ax.set_ylabel("loss")
        if series:
            ax.legend(fontsize=7, ncol=2)
        return _save(fig, path)


def plot_comparison(path, rows):
    """Mean +/- std bars from compare_runs rows."""
    metrics = ("overall", "many", "medium", "few")
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        width = 0.8 / max(len(rows), 1)
        x = np.arange(len(metrics))
        for i, row in enumerate(rows):
            mean = [np.nan if row[f"{m}_mean"] is None else 100 * row[f"{m}_mean"] for m in metrics]
            std = [0.0 if row[f"{m}_std"] is None else 100 * row[f"{m}_std"] for m in metrics]
            ax.bar(x + i * width, mean, width, yerr=std, capsize=2, label=row["method"])
        ax.set_xticks(x + width * (len(rows) - 1) / 2)
        ax.set_xticklabels(metrics)
        ax.set_ylabel("top-1 accuracy (%)")
        ax.set_ylim(0, 100)
        ax.legend(fontsize=7)
        return _save(fig, path)
