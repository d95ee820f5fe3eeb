"""K-means clustering with careful seeding and representative selection.

Standard Lloyd iterations with k-means++ initialization. Points are
canonicalized to row-lexicographic order internally, so the outcome depends
on the multiset of points and the seed, never on input order: permuting the
rows permutes assignments consistently and leaves centers and inertia
unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np
from scipy.spatial.distance import cdist

_SeedLike = Union[int, Sequence[int]]


@dataclass(frozen=True)
class Clustering:
    """Cluster centers, per-point assignment, and total inertia."""

    centers: np.ndarray
    assignment: np.ndarray
    inertia: float

    def __post_init__(self) -> None:
        centers = np.asarray(self.centers, dtype=float)
        assignment = np.asarray(self.assignment, dtype=int)
        if centers.ndim != 2 or assignment.ndim != 1:
            raise ValueError("centers must be (k, d) and assignment (n,)")
        if assignment.min(initial=0) < 0 or assignment.max(initial=0) >= len(centers):
            raise ValueError("assignment references a missing cluster")
        centers.setflags(write=False)
        assignment.setflags(write=False)
        object.__setattr__(self, "centers", centers)
        object.__setattr__(self, "assignment", assignment)

    @property
    def k(self) -> int:
        return self.centers.shape[0]


def _sq_dists(points: np.ndarray, centers: np.ndarray) -> np.ndarray:
    return cdist(points, centers, metric="sqeuclidean")


def _plus_plus_init(
    points: np.ndarray, k: int, rng: np.random.Generator
) -> np.ndarray:
    """k-means++ seeding: first center uniform, then D^2-weighted draws."""
    n = points.shape[0]
    chosen = [int(rng.integers(n))]
    d2 = _sq_dists(points, points[chosen[-1]][None, :])[:, 0]
    while len(chosen) < k:
        total = float(d2.sum())
        if total > 0.0:
            idx = int(rng.choice(n, p=d2 / total))
        else:
            # All remaining mass is on already-chosen duplicates.
            unchosen = np.setdiff1d(np.arange(n), np.array(chosen))
            idx = int(rng.choice(unchosen))
        chosen.append(idx)
        d2 = np.minimum(d2, _sq_dists(points, points[idx][None, :])[:, 0])
    return points[chosen].copy()


def _update_centers(
    points: np.ndarray, assignment: np.ndarray, centers: np.ndarray
) -> np.ndarray:
    """Means of assigned members; empty clusters grab the farthest point."""
    k = centers.shape[0]
    new_centers = centers.copy()
    counts = np.bincount(assignment, minlength=k)
    for c in range(k):
        if counts[c] > 0:
            new_centers[c] = points[assignment == c].mean(axis=0)
    if np.any(counts == 0):
        dist_to_own = _sq_dists(points, new_centers)[
            np.arange(len(points)), assignment
        ]
        taken: set[int] = set()
        for c in np.flatnonzero(counts == 0):
            order = np.argsort(-dist_to_own, kind="stable")
            pick = next((int(i) for i in order if int(i) not in taken), None)
            if pick is None or dist_to_own[pick] == 0.0:
                continue
            new_centers[c] = points[pick]
            taken.add(pick)
            dist_to_own[pick] = 0.0
    return new_centers


def kmeans(
    points: np.ndarray,
    k: int,
    seed: _SeedLike,
    max_iter: int = 300,
    tol: float = 1e-6,
) -> Clustering:
    """Cluster `points` into `k` groups.

    Runs Lloyd iterations from a k-means++ start until the assignment stops
    changing, the maximum center movement drops to `tol`, or `max_iter`
    rounds pass. Inertia is non-increasing across rounds by construction
    (asserted). Identical inputs and seed give identical output.
    """
    points = np.asarray(points, dtype=float)
    if points.ndim != 2 or points.shape[0] == 0:
        raise ValueError(f"points must be a non-empty (n, d) array, got {points.shape}")
    if not np.all(np.isfinite(points)):
        raise ValueError("non-finite point coordinate")
    n = points.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"k must lie in 1..{n}, got {k}")

    # Order-independence: run on lexicographically sorted rows, map back.
    order = np.lexsort(points.T[::-1])
    pts = points[order]
    rng = np.random.default_rng(seed)
    centers = _plus_plus_init(pts, k, rng)
    assignment = np.argmin(_sq_dists(pts, centers), axis=1)
    prev_inertia = np.inf
    for _ in range(max_iter):
        new_centers = _update_centers(pts, assignment, centers)
        movement = float(np.max(np.linalg.norm(new_centers - centers, axis=1)))
        new_assignment = np.argmin(_sq_dists(pts, new_centers), axis=1)
        inertia = float(
            _sq_dists(pts, new_centers)[np.arange(n), new_assignment].sum()
        )
        assert inertia <= prev_inertia * (1 + 1e-12) + 1e-12, (
            "inertia increased within a Lloyd iteration"
        )
        prev_inertia = inertia
        converged = bool(np.array_equal(new_assignment, assignment))
        centers = new_centers
        assignment = new_assignment
        if converged or movement <= tol:
            break
    inertia = float(_sq_dists(pts, centers)[np.arange(n), assignment].sum())
    full_assignment = np.empty(n, dtype=int)
    full_assignment[order] = assignment
    return Clustering(centers=centers, assignment=full_assignment, inertia=inertia)


def nearest_to_centers(points: np.ndarray, clustering: Clustering) -> np.ndarray:
    """One representative index per cluster: its member nearest the center.

    Ties break toward the lowest point index. Clusters left empty by
    degenerate duplicate-heavy inputs are represented by the lowest-index
    points not yet selected, keeping the result k distinct indices.
    """
    points = np.asarray(points, dtype=float)
    if points.shape[0] != len(clustering.assignment):
        raise ValueError("points and assignment differ in length")
    reps: list[int] = []
    taken: set[int] = set()
    for c in range(clustering.k):
        members = np.flatnonzero(clustering.assignment == c)
        if len(members) == 0:
            continue
        d = np.linalg.norm(points[members] - clustering.centers[c], axis=1)
        pick = int(members[int(np.argmin(d))])
        reps.append(pick)
        taken.add(pick)
    for c in range(clustering.k - len(reps)):
        filler = next(i for i in range(points.shape[0]) if i not in taken)
        reps.append(filler)
        taken.add(filler)
    return np.array(sorted(reps), dtype=int)
