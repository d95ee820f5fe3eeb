"""Batch-size schedules and acquisition strategies.

A schedule fixes a training-set growth law N(t); the batch at iteration t is
the forward difference N(t) - N(t-1), with the first batch pinned to one full
increment so runs always grow. Strategies rank or sample the held-out pool
and return batch indices; every strategy's randomness is a pure function of
(seed, iteration), so replays are exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .cluster import kmeans, nearest_to_centers
from .gp import Prediction
from .moldata import TargetSpec

_STREAM_STRATEGY = 3
_STREAM_CLUSTER = 4

SCHEDULE_KINDS = ("POW", "CONST")
POW_VARIANTS = ("literal", "doubling_total")

STRATEGY_IDS = (
    "random",
    "uncertainty",
    "cluster",
    "uncertainty_cluster",
    "property_search",
)


@dataclass(frozen=True)
class BatchSchedule:
    """Growth plan for the training set.

    POW doubles the added mass each iteration: N(t) = 2^t * n_const + n_init
    (variant "doubling_total" doubles the whole set instead:
    N(t) = 2^(t+1) * n_init). CONST adds a fixed amount: N(t) = t * n_const
    + n_init. Every run's first batch (t = 0) is one full increment --
    n_const points (n_init for the doubling-total variant) -- so under
    CONST the training set after iteration t holds N(t+1) points.
    """

    kind: str
    n_const: int = 1000
    n_init: int = 1000
    pow_variant: str = "literal"

    def __post_init__(self) -> None:
        if self.kind not in SCHEDULE_KINDS:
            raise ValueError(
                f"schedule kind must be one of {SCHEDULE_KINDS}, got {self.kind!r}"
            )
        if self.pow_variant not in POW_VARIANTS:
            raise ValueError(
                f"pow_variant must be one of {POW_VARIANTS}, "
                f"got {self.pow_variant!r}"
            )
        if self.n_const < 1 or self.n_init < 1:
            raise ValueError("n_const and n_init must be positive")

    def total_train_size(self, t: int) -> int:
        """Cumulative training size after iteration t (t >= 0)."""
        if t < 0:
            raise ValueError(f"iteration must be non-negative, got {t}")
        if self.kind == "POW":
            if self.pow_variant == "doubling_total":
                return 2 ** (t + 1) * self.n_init
            return 2**t * self.n_const + self.n_init
        return t * self.n_const + self.n_init

    def batch_size(self, t: int) -> int:
        """Points acquired at iteration t.

        For t >= 1 this is the forward difference N(t) - N(t-1). The first
        batch is always one full increment: n_const for either kind (the
        doubling-total POW variant's first step is n_init), never zero.
        """
        if t == 0:
            if self.kind == "CONST":
                return self.n_const
            return self.total_train_size(0) - self.n_init
        return self.total_train_size(t) - self.total_train_size(t - 1)


@dataclass(frozen=True)
class AcquisitionContext:
    """Everything a strategy may look at for one iteration.

    `predictions` and `descriptors` are aligned over the held-out pool in
    its current (sorted) index order; strategies return positions into that
    order. `target` is required only by property search.
    """

    predictions: Prediction
    descriptors: np.ndarray
    seed: int
    iteration: int
    target: Optional[TargetSpec] = None

    def __post_init__(self) -> None:
        desc = np.asarray(self.descriptors, dtype=float)
        if desc.ndim != 2:
            raise ValueError(f"descriptors must be (n, d), got {desc.shape}")
        if len(self.predictions) != desc.shape[0]:
            raise ValueError(
                f"{len(self.predictions)} predictions but {desc.shape[0]} "
                f"descriptor rows"
            )
        if self.seed < 0 or self.iteration < 0:
            raise ValueError("seed and iteration must be non-negative")
        object.__setattr__(self, "descriptors", desc)

    @property
    def pool_size(self) -> int:
        return len(self.predictions)

    def strategy_rng(self) -> np.random.Generator:
        return np.random.default_rng(
            [self.seed, _STREAM_STRATEGY, self.iteration]
        )

    def cluster_seed(self) -> list[int]:
        return [self.seed, _STREAM_CLUSTER, self.iteration]


def _check_batch(ctx: AcquisitionContext, n_batch: int, cap: int) -> None:
    if not 1 <= n_batch <= cap:
        raise ValueError(
            f"batch size must lie in 1..{cap}, got {n_batch} "
            f"(held-out pool has {ctx.pool_size})"
        )


def select_random(ctx: AcquisitionContext, n_batch: int) -> np.ndarray:
    """Uniform sample without replacement from the held-out pool."""
    _check_batch(ctx, n_batch, ctx.pool_size)
    rng = ctx.strategy_rng()
    picked = rng.choice(ctx.pool_size, size=n_batch, replace=False)
    return np.sort(picked)


def select_uncertainty(ctx: AcquisitionContext, n_batch: int) -> np.ndarray:
    """The n_batch highest predictive variances; stable under ties."""
    _check_batch(ctx, n_batch, ctx.pool_size)
    order = np.argsort(-ctx.predictions.variance, kind="stable")
    return np.sort(order[:n_batch])


def select_cluster(ctx: AcquisitionContext, n_batch: int) -> np.ndarray:
    """k-means over the held-out pool, one representative per cluster."""
    _check_batch(ctx, n_batch, ctx.pool_size)
    clustering = kmeans(ctx.descriptors, n_batch, seed=ctx.cluster_seed())
    return np.sort(nearest_to_centers(ctx.descriptors, clustering))


def select_uncertainty_cluster(
    ctx: AcquisitionContext, n_batch: int
) -> np.ndarray:
    """Cluster the most-uncertain half, pick one point per cluster.

    The candidate set is the ceil(n/2) highest-variance points; the batch
    is their cluster representatives, so it cannot exceed half the pool.
    """
    n_half = math.ceil(ctx.pool_size / 2)
    _check_batch(ctx, n_batch, n_half)
    order = np.argsort(-ctx.predictions.variance, kind="stable")
    candidates = np.sort(order[:n_half])
    clustering = kmeans(
        ctx.descriptors[candidates], n_batch, seed=ctx.cluster_seed()
    )
    reps = nearest_to_centers(ctx.descriptors[candidates], clustering)
    return np.sort(candidates[reps])


def select_property_search(
    ctx: AcquisitionContext, n_batch: int
) -> np.ndarray:
    """Random draw from points whose predicted mean clears the target.

    When fewer than n_batch candidates exist, all of them are taken and
    the shortfall is filled with the highest-mean non-candidates (stable
    under ties), so the batch is always full.
    """
    if ctx.target is None:
        raise ValueError("property search requires a target threshold")
    _check_batch(ctx, n_batch, ctx.pool_size)
    mean = ctx.predictions.mean
    candidates = np.flatnonzero(mean > ctx.target.epsilon)
    rng = ctx.strategy_rng()
    if len(candidates) >= n_batch:
        picked = candidates[
            rng.choice(len(candidates), size=n_batch, replace=False)
        ]
        return np.sort(picked)
    rest = np.setdiff1d(np.arange(ctx.pool_size), candidates)
    order = rest[np.argsort(-mean[rest], kind="stable")]
    filler = order[: n_batch - len(candidates)]
    return np.sort(np.concatenate([candidates, filler]))


_STRATEGIES = {
    "random": select_random,
    "uncertainty": select_uncertainty,
    "cluster": select_cluster,
    "uncertainty_cluster": select_uncertainty_cluster,
    "property_search": select_property_search,
}


def select(
    strategy_id: str, ctx: AcquisitionContext, n_batch: int
) -> np.ndarray:
    """Dispatch to a strategy by id; result is sorted held-out positions."""
    try:
        fn = _STRATEGIES[strategy_id]
    except KeyError:
        raise ValueError(
            f"unknown strategy {strategy_id!r}; known: {', '.join(STRATEGY_IDS)}"
        ) from None
    picked = fn(ctx, n_batch)
    assert len(np.unique(picked)) == len(picked) == n_batch
    return picked


def max_batch(strategy_id: str, pool_size: int) -> int:
    """Largest batch a strategy can produce from a held-out pool."""
    if strategy_id == "uncertainty_cluster":
        return math.ceil(pool_size / 2)
    return pool_size
