"""Regression and classification metrics, learning-curve bookkeeping.

The classification view treats a labeled molecule as positive when its label
clears the target threshold and asks whether the model's predicted mean does
the same. Rates follow the usual confusion-matrix definitions: TPR = TP / P
and FPR = FP / N; a rate whose denominator class is absent is reported as
missing rather than zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .moldata import Dataset, TargetSpec


@dataclass(frozen=True)
class IterationRecord:
    """One learning-curve point: metrics after iteration t's acquisition."""

    strategy: str
    seed: int
    t: int
    train_size: int
    mae_test: float
    mae_test_inrange: Optional[float] = None
    tpr_test: Optional[float] = None
    fpr_test: Optional[float] = None
    tpr_held: Optional[float] = None
    fpr_held: Optional[float] = None
    n_inrange_train: Optional[int] = None


def mae(predicted: np.ndarray, truth: np.ndarray) -> float:
    """Mean absolute error between equal-length vectors."""
    predicted = np.asarray(predicted, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if predicted.shape != truth.shape or predicted.ndim != 1:
        raise ValueError(
            f"predictions and truth must be equal-length vectors, "
            f"got {predicted.shape} and {truth.shape}"
        )
    if len(predicted) == 0:
        raise ValueError("cannot average an empty error vector")
    return float(np.mean(np.abs(predicted - truth)))


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def tpr(self) -> Optional[float]:
        pos = self.tp + self.fn
        return self.tp / pos if pos > 0 else None

    @property
    def fpr(self) -> Optional[float]:
        neg = self.fp + self.tn
        return self.fp / neg if neg > 0 else None


def confusion(
    predicted: np.ndarray, truth: np.ndarray, target: TargetSpec
) -> ConfusionCounts:
    predicted = np.asarray(predicted, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if predicted.shape != truth.shape or predicted.ndim != 1:
        raise ValueError("predictions and truth must be equal-length vectors")
    pred_pos = target.in_range(predicted)
    true_pos = target.in_range(truth)
    tp = int(np.sum(pred_pos & true_pos))
    fp = int(np.sum(pred_pos & ~true_pos))
    tn = int(np.sum(~pred_pos & ~true_pos))
    fn = int(np.sum(~pred_pos & true_pos))
    return ConfusionCounts(tp=tp, fp=fp, tn=tn, fn=fn)


def classification_rates(
    predicted: np.ndarray, truth: np.ndarray, target: TargetSpec
) -> tuple[Optional[float], Optional[float]]:
    """(TPR, FPR) with None standing in for an undefined rate."""
    counts = confusion(predicted, truth, target)
    return counts.tpr, counts.fpr


def inrange_count(labels: np.ndarray, target: TargetSpec) -> int:
    return int(np.sum(target.in_range(np.asarray(labels, dtype=float))))


def inrange_progress(
    records: Sequence[IterationRecord], dataset: Dataset, target: TargetSpec
) -> list[tuple[int, float]]:
    """(train_size, % of the dataset's in-range molecules captured) per record."""
    total_inrange = inrange_count(dataset.label_array(), target)
    if total_inrange <= 0:
        raise ValueError("pool contains no in-range molecules")
    out: list[tuple[int, float]] = []
    for rec in records:
        if rec.n_inrange_train is None:
            raise ValueError(f"record at t={rec.t} lacks an in-range count")
        out.append((rec.train_size, 100.0 * rec.n_inrange_train / total_inrange))
    return out


@dataclass(frozen=True)
class SavingsCurve:
    """Head-to-head in-range discovery of a search run vs a reference run.

    All arrays share the common train-size grid. `extra_pct` is the search
    run's in-range percentage minus the reference's at equal train size.
    `search_size_at_level[i]` is the smallest (linearly interpolated)
    training size at which the search run reaches the reference's
    percentage at grid point i, and `saved[i]` the corresponding reduction
    in labeled molecules; both are NaN where the search run never gets
    there.
    """

    train_sizes: np.ndarray
    pct_search: np.ndarray
    pct_reference: np.ndarray
    extra_pct: np.ndarray
    search_size_at_level: np.ndarray
    saved: np.ndarray


def _size_reaching(
    sizes: np.ndarray, pcts: np.ndarray, level: float
) -> float:
    """Smallest train size whose interpolated percentage reaches `level`."""
    if level <= pcts[0]:
        return float(sizes[0])
    above = np.flatnonzero(pcts >= level)
    if len(above) == 0:
        return math.nan
    j = int(above[0])
    x0, x1 = float(sizes[j - 1]), float(sizes[j])
    y0, y1 = float(pcts[j - 1]), float(pcts[j])
    if y1 == y0:
        return x1
    return x0 + (level - y0) * (x1 - x0) / (y1 - y0)


def savings(
    search_curve: Sequence[tuple[int, float]],
    reference_curve: Sequence[tuple[int, float]],
) -> SavingsCurve:
    """Compare in-range discovery curves over a shared train-size grid."""
    s_sizes = np.array([s for s, _ in search_curve], dtype=float)
    r_sizes = np.array([s for s, _ in reference_curve], dtype=float)
    if len(s_sizes) == 0:
        raise ValueError("curves are empty")
    if s_sizes.shape != r_sizes.shape or not np.array_equal(s_sizes, r_sizes):
        raise ValueError(
            f"curves are on different train-size grids: "
            f"{s_sizes.astype(int).tolist()} vs {r_sizes.astype(int).tolist()}"
        )
    pct_s = np.array([p for _, p in search_curve], dtype=float)
    pct_r = np.array([p for _, p in reference_curve], dtype=float)
    for pct in (pct_s, pct_r):
        if np.any(pct < -1e-9) or np.any(pct > 100.0 + 1e-9):
            raise ValueError("percentages must lie in [0, 100]")
    level_sizes = np.array(
        [_size_reaching(s_sizes, pct_s, level) for level in pct_r]
    )
    return SavingsCurve(
        train_sizes=s_sizes,
        pct_search=pct_s,
        pct_reference=pct_r,
        extra_pct=pct_s - pct_r,
        search_size_at_level=level_sizes,
        saved=s_sizes - level_sizes,
    )
