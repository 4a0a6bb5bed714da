"""Figure rendering for the report pipeline.

Every report command drops a PNG next to its delimited output so a run
directory is self-describing without further tooling.  All rendering goes
through the Agg backend; nothing here ever opens a window.
"""

from __future__ import annotations

import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .evaluation import CrossValidation, SparseStudy
from .scaling import JodScale

__all__ = [
    "plot_jod_curves",
    "plot_goodness_bars",
    "plot_sparse_bars",
]

_KIND_COLORS = {
    "NN": "tab:blue",
    "LINEAR": "tab:orange",
    "OPT": "tab:green",
    "DQ": "tab:red",
    "GAUSS": "tab:purple",
    "EXTERNAL": "tab:brown",
}


def _split_condition(cid: str) -> tuple[str, int]:
    if cid == "ref":
        return "REF", 0
    kind, _, tail = cid.rpartition("_L")
    return kind, int(tail)


def plot_jod_curves(scales: dict[str, JodScale], path: str | Path) -> Path:
    """Quality-vs-severity curves, one panel per scene, 95% CI bars."""
    path = Path(path)
    scenes = sorted(scales)
    if not scenes:
        raise ValueError("no scenes to plot")
    ncols = min(4, len(scenes))
    nrows = math.ceil(len(scenes) / ncols)
    fig, axes = plt.subplots(
        nrows, ncols, figsize=(3.4 * ncols, 2.8 * nrows), squeeze=False, sharey=True
    )
    for ax in axes.flat[len(scenes):]:
        ax.set_visible(False)
    for panel, scene in enumerate(scenes):
        ax = axes.flat[panel]
        scale = scales[scene]
        by_kind: dict[str, list[tuple[int, int]]] = {}
        ref_index = None
        for i, cid in enumerate(scale.condition_ids):
            kind, level = _split_condition(cid)
            if kind == "REF":
                ref_index = i
                continue
            by_kind.setdefault(kind, []).append((level, i))
        for kind in sorted(by_kind):
            pts = sorted(by_kind[kind])
            if ref_index is not None:
                pts = [(0, ref_index)] + pts
            levels = [p[0] for p in pts]
            idx = [p[1] for p in pts]
            jod = scale.jod[idx]
            lo = jod - scale.ci_low[idx]
            hi = scale.ci_high[idx] - jod
            ax.errorbar(
                levels, jod, yerr=np.vstack([lo, hi]),
                marker="o", markersize=3, capsize=2, linewidth=1,
                color=_KIND_COLORS.get(kind), label=kind,
            )
        ax.set_title(scene, fontsize=9)
        ax.set_xlabel("severity level", fontsize=8)
        ax.set_ylabel("quality [JOD]", fontsize=8)
        ax.tick_params(labelsize=7)
        ax.grid(True, alpha=0.3)
    handles, labels = axes.flat[0].get_legend_handles_labels()
    if handles:
        fig.legend(handles, labels, loc="lower center", ncol=len(labels), fontsize=8)
    fig.tight_layout(rect=(0, 0.06, 1, 1))
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_goodness_bars(cv_by_metric: dict[str, CrossValidation], path: str | Path) -> Path:
    """Cross-validated fit quality per metric: Pearson and reduced chi-square."""
    path = Path(path)
    metrics = sorted(cv_by_metric)
    if not metrics:
        raise ValueError("no metrics to plot")
    x = np.arange(len(metrics))
    fig, (ax_r, ax_chi) = plt.subplots(1, 2, figsize=(2.2 + 1.1 * len(metrics), 3.4))
    for ax, field in ((ax_r, "pearson"), (ax_chi, "chi2_red")):
        vals = np.array([cv_by_metric[m].mean[field] for m in metrics])
        errs = np.array([cv_by_metric[m].stderr[field] for m in metrics])
        ax.bar(x, np.nan_to_num(vals), yerr=np.nan_to_num(errs), capsize=3,
               color="tab:blue" if field == "pearson" else "tab:gray")
        ax.set_xticks(x)
        ax.set_xticklabels(metrics, rotation=45, ha="right", fontsize=7)
        ax.tick_params(labelsize=7)
        ax.grid(True, axis="y", alpha=0.3)
    ax_r.set_ylabel("mean fold Pearson r", fontsize=8)
    ax_r.set_ylim(0, 1.05)
    ax_chi.set_ylabel("mean reduced chi-square", fontsize=8)
    ax_chi.axhline(1.0, color="k", linewidth=0.8, linestyle="--")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_sparse_bars(study: SparseStudy, path: str | Path) -> Path:
    """Grouped bars: mean fold Pearson per metric under each reference mode."""
    path = Path(path)
    metrics = sorted({r.metric_id for r in study.rows})
    modes = sorted({r.mode for r in study.rows}, key=lambda m: (m != "dense", m))
    if not metrics:
        raise ValueError("no rows to plot")
    lookup = {(r.metric_id, r.mode): r for r in study.rows}
    width = 0.8 / len(modes)
    x = np.arange(len(metrics))
    fig, ax = plt.subplots(figsize=(2.4 + 1.4 * len(metrics), 3.4))
    for j, mode in enumerate(modes):
        vals, errs = [], []
        for m in metrics:
            row = lookup.get((m, mode))
            vals.append(0.0 if row is None or math.isnan(row.mean_pearson) else row.mean_pearson)
            errs.append(0.0 if row is None or math.isnan(row.se_pearson) else row.se_pearson)
        ax.bar(x + (j - (len(modes) - 1) / 2) * width, vals, width,
               yerr=errs, capsize=3, label=mode)
    ax.set_xticks(x)
    ax.set_xticklabels(metrics, fontsize=8)
    ax.set_ylabel("mean fold Pearson r", fontsize=8)
    ax.set_ylim(0, 1.05)
    ax.legend(fontsize=8)
    ax.grid(True, axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
