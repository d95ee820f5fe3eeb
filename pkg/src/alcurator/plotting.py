"""Figure rendering for run reports.

All figures are written as PNG files next to the delimited outputs they
visualize, through the non-interactive backend so headless runs work.
"""

from __future__ import annotations

import os
import tempfile
from typing import Optional, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402 - backend must be set first

from .metrics import IterationRecord, SavingsCurve  # noqa: E402
from .report import NoiseGridRow  # noqa: E402

STRATEGY_COLORS = {
    "random": "#7f7f7f",
    "uncertainty": "#1f77b4",
    "cluster": "#2ca02c",
    "uncertainty_cluster": "#d62728",
    "property_search": "#9467bd",
}


def _apply_style() -> None:
    plt.rcParams.update(
        {
            "figure.dpi": 150,
            "font.size": 9,
            "axes.grid": True,
            "grid.alpha": 0.3,
            "axes.spines.top": False,
            "axes.spines.right": False,
        }
    )


def save_figure(fig, path: str) -> None:
    """Write a figure atomically and release its memory."""
    directory = os.path.dirname(os.path.abspath(path)) or "."
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".partial-")
    os.close(fd)
    try:
        fig.savefig(tmp, format="png", bbox_inches="tight")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    finally:
        plt.close(fig)


def _by_seed(
    records: Sequence[IterationRecord],
) -> dict[int, list[IterationRecord]]:
    out: dict[int, list[IterationRecord]] = {}
    for rec in records:
        out.setdefault(rec.seed, []).append(rec)
    for rows in out.values():
        rows.sort(key=lambda r: r.t)
    return out

def _mean_curve(
    records: Sequence[IterationRecord], field: str
) -> tuple[list[int], list[float], list[float]]:
    """Across-seed mean and sd of one metric, per iteration."""
    by_t: dict[int, list[float]] = {}
    size_of: dict[int, int] = {}
    for rec in records:
        value = getattr(rec, field)
        if value is None:
            continue
        by_t.setdefault(rec.t, []).append(float(value))
        size_of[rec.t] = rec.train_size
    sizes, means, sds = [], [], []
    for t in sorted(by_t):
        values = sorted(by_t[t])
        n = len(values)
        mean = sum(values) / n
        if n > 1:
            var = sum((v - mean) ** 2 for v in values) / (n - 1)
        else:
            var = 0.0
        sizes.append(size_of[t])
        means.append(mean)
        sds.append(var**0.5)
    return sizes, means, sds


def render_learning_curve(
    records: Sequence[IterationRecord], path: str, title: str = ""
) -> Optional[str]:
    """Test MAE against training-set size: faint per-seed lines plus the
    across-seed mean with a +-1 sd band. Returns the path, or None when
    there is nothing to plot."""
    records = [r for r in records if r.mae_test is not None]
    if not records:
        return None
    _apply_style()
    strategy = records[0].strategy
    color = STRATEGY_COLORS.get(strategy, "#1f77b4")
    fig, ax = plt.subplots(figsize=(5.2, 3.6))
    for rows in _by_seed(records).values():
        ax.plot(
            [r.train_size for r in rows],
            [r.mae_test for r in rows],
            color=color,
            alpha=0.25,
            linewidth=0.8,
        )
    sizes, means, sds = _mean_curve(records, "mae_test")
    ax.plot(sizes, means, color=color, marker="o", markersize=3, label=strategy)
    ax.fill_between(
        sizes,
        [m - s for m, s in zip(means, sds)],
        [m + s for m, s in zip(means, sds)],
        color=color,
        alpha=0.15,
    )
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("training set size")
    ax.set_ylabel("test MAE (eV)")
    if title:
        ax.set_title(title)
    ax.legend(frameon=False)
    save_figure(fig, path)
    return path


def render_classification_curves(
    records: Sequence[IterationRecord], path: str, title: str = ""
) -> Optional[str]:
    """TPR and FPR against training size, on test and held-out pools."""
    panels = (
        ("tpr_test", "tpr_held", "true positive rate"),
        ("fpr_test", "fpr_held", "false positive rate"),
    )
    if not any(
        getattr(r, f) is not None for r in records for f, _, _ in panels
    ):
        return None
    _apply_style()
    fig, axes = plt.subplots(1, 2, figsize=(8.4, 3.4), sharex=True)
    for ax, (test_field, held_field, label) in zip(axes, panels):
        for field, style, name in (
            (test_field, "-", "test"),
            (held_field, "--", "held-out"),
        ):
            sizes, means, sds = _mean_curve(records, field)
            if not sizes:
                continue
            ax.errorbar(
                sizes, means, yerr=sds, linestyle=style, marker="o",
                markersize=3, capsize=2, label=name,
            )
        ax.set_xscale("log")
        ax.set_xlabel("training set size")
        ax.set_ylabel(label)
        ax.set_ylim(-0.02, 1.02)
        ax.legend(frameon=False)
    if title:
        fig.suptitle(title)
    save_figure(fig, path)
    return path


def render_savings(curve: SavingsCurve, path: str, title: str = "") -> str:
    """In-range discovery of search vs reference, and the labels saved."""
    _apply_style()
    fig, axes = plt.subplots(1, 2, figsize=(8.4, 3.4))
    ax = axes[0]
    ax.plot(
        curve.train_sizes, curve.pct_search,
        color=STRATEGY_COLORS["property_search"], marker="o",
        markersize=3, label="property search",
    )
    ax.plot(
        curve.train_sizes, curve.pct_reference,
        color=STRATEGY_COLORS["random"], marker="s",
        markersize=3, label="random",
    )
    ax.set_xlabel("training set size")
    ax.set_ylabel("in-range molecules found (%)")
    ax.legend(frameon=False)
    ax = axes[1]
    ax.plot(
        curve.train_sizes, curve.saved, color="#333333",
        marker="o", markersize=3,
    )
    ax.set_xlabel("training set size (reference)")
    ax.set_ylabel("labels saved at equal discovery")
    if title:
        fig.suptitle(title)
    save_figure(fig, path)
    return path


def render_noise_grid(
    rows: Sequence[NoiseGridRow], argmin_noise: float, path: str
) -> str:
    """Validation MAE against the observation-noise level, argmin marked."""
    _apply_style()
    fig, ax = plt.subplots(figsize=(5.2, 3.6))
    mine = sorted(rows, key=lambda r: r.noise)
    ax.plot(
        [r.noise for r in mine],
        [r.mae_validation for r in mine],
        marker="o",
        markersize=4,
        color="#1f77b4",
    )
    ax.axvline(
        argmin_noise, color="#d62728", linestyle="--", linewidth=1.2,
        label=f"argmin = {argmin_noise:g}",
    )
    ax.set_xscale("log")
    ax.set_xlabel("observation noise variance")
    ax.set_ylabel("validation MAE (eV)")
    ax.legend(frameon=False)
    save_figure(fig, path)
    return path


def render_label_histogram(
    labels, path: str, epsilon: Optional[float] = None, title: str = ""
) -> str:
    """Label distribution of a pool, with the target threshold marked."""
    _apply_style()
    fig, ax = plt.subplots(figsize=(5.2, 3.6))
    ax.hist(list(labels), bins=60, color="#1f77b4", alpha=0.8)
    if epsilon is not None:
        ax.axvline(epsilon, color="#d62728", linestyle="--", linewidth=1.2)
        ax.text(
            epsilon, ax.get_ylim()[1] * 0.95, " threshold",
            color="#d62728", va="top", fontsize=8,
        )
    ax.set_xlabel("label (eV)")
    ax.set_ylabel("count")
    if title:
        ax.set_title(title)
    save_figure(fig, path)
    return path
