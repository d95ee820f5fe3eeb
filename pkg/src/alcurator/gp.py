"""Exact Gaussian-process regression with an RBF kernel.

The kernel is k(x, x') = sigma_f * exp(-||x - x'||^2 / (2 l^2)): the signal
variance multiplies the exponential linearly. Training solves
(K + sigma_n^2 I) alpha = y through a Cholesky factorization; prediction and
the log marginal likelihood reuse the factor through triangular solves, so no
matrix is ever explicitly inverted. Hyperparameters (l, sigma_f) are tuned by
bounded maximization of the log marginal likelihood in log-space while the
noise level stays fixed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular
from scipy.spatial.distance import cdist

from .descriptor import DescriptorMatrix, DescriptorVector, check_same_config

DEFAULT_LENGTH_SCALE = 700.0
DEFAULT_SIGNAL_VARIANCE = 20.0
DEFAULT_NOISE = 1e-10
DEFAULT_RESTARTS = 2
DEFAULT_BOUNDS_FACTOR = 100.0
MAX_EXACT_TRAIN = 4000

# Successive diagonal boosts tried when a factorization fails.
_JITTER_START = 1e-10
_JITTER_LIMIT = 1e-4

# Candidate noise levels for observation-noise calibration sweeps.
NOISE_GRID = (1e-10, 1e-4, 1e-3, 1e-2, 0.05, 0.1, 0.5)


class IllConditionedError(RuntimeError):
    """Raised when the kernel matrix cannot be factorized at any jitter."""


class TrainingSizeError(ValueError):
    """Raised when a training set exceeds the exact-solver cap."""


@dataclass(frozen=True)
class GpHyperparams:
    """Kernel length scale, linear signal variance, and noise variance."""

    length_scale: float = DEFAULT_LENGTH_SCALE
    signal_variance: float = DEFAULT_SIGNAL_VARIANCE
    noise: float = DEFAULT_NOISE

    def __post_init__(self) -> None:
        if not (math.isfinite(self.length_scale) and self.length_scale > 0):
            raise ValueError(f"length_scale must be positive, got {self.length_scale}")
        if not (math.isfinite(self.signal_variance) and self.signal_variance > 0):
            raise ValueError(
                f"signal_variance must be positive, got {self.signal_variance}"
            )
        if not (math.isfinite(self.noise) and self.noise >= 0):
            raise ValueError(f"noise must be non-negative, got {self.noise}")


@dataclass(frozen=True)
class Prediction:
    """Posterior mean and (non-negative, noise-free) variance per point."""

    mean: np.ndarray
    variance: np.ndarray

    def __post_init__(self) -> None:
        mean = np.asarray(self.mean, dtype=float)
        var = np.asarray(self.variance, dtype=float)
        if mean.shape != var.shape or mean.ndim != 1:
            raise ValueError("mean and variance must be equal-length vectors")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "variance", var)

    def __len__(self) -> int:
        return len(self.mean)


def _as_matrix(x: Union[np.ndarray, DescriptorMatrix]) -> tuple[np.ndarray, Optional[str]]:
    if isinstance(x, DescriptorMatrix):
        return x.values, x.config_hash
    arr = np.asarray(x, dtype=float)
    if arr.ndim != 2:
        raise ValueError(f"expected a 2-d input matrix, got shape {arr.shape}")
    return arr, None


def kernel_matrix(
    a: np.ndarray, b: np.ndarray, hyper: GpHyperparams
) -> np.ndarray:
    """Dense kernel block K(a, b); symmetric when a is b."""
    sq = cdist(a, b, metric="sqeuclidean")
    return hyper.signal_variance * np.exp(-sq / (2.0 * hyper.length_scale**2))


def kernel_value(
    x: DescriptorVector, y: DescriptorVector, hyper: GpHyperparams
) -> float:
    """Kernel between two descriptor vectors of identical configuration."""
    check_same_config(x.config_hash, y.config_hash)
    diff = x.values - y.values
    return float(
        hyper.signal_variance
        * math.exp(-float(diff @ diff) / (2.0 * hyper.length_scale**2))
    )


@dataclass(frozen=True)
class GpModel:
    """A fitted model: training inputs, Cholesky factor, and weights.

    `factor` is the lower-triangular L with L L^T = K + noise I (+ jitter),
    `alpha` solves (K + noise I) alpha = y. `jitter` records the diagonal
    boost the factorization needed (0.0 when none).
    """

    hyper: GpHyperparams
    x_train: np.ndarray
    y_train: np.ndarray
    factor: np.ndarray
    alpha: np.ndarray
    jitter: float
    config_hash: Optional[str] = None

    @property
    def n_train(self) -> int:
        return self.x_train.shape[0]


def _factorize(k_noisy: np.ndarray) -> tuple[np.ndarray, float]:
    """Cholesky with an escalating diagonal jitter ladder."""
    try:
        return cholesky(k_noisy, lower=True), 0.0
    except np.linalg.LinAlgError:
        pass
    jitter = _JITTER_START
    eye = np.eye(k_noisy.shape[0])
    while jitter <= _JITTER_LIMIT * (1 + 1e-12):
        try:
            return cholesky(k_noisy + jitter * eye, lower=True), jitter
        except np.linalg.LinAlgError:
            jitter *= 10.0
    raise IllConditionedError(
        f"kernel matrix is not positive definite even with jitter up to "
        f"{_JITTER_LIMIT:g}"
    )


def fit(
    x: Union[np.ndarray, DescriptorMatrix],
    y: np.ndarray,
    hyper: GpHyperparams,
    max_train: int = MAX_EXACT_TRAIN,
) -> GpModel:
    """Fit the exact GP; cost is cubic in the number of training rows."""
    x_arr, config_hash = _as_matrix(x)
    y_arr = np.asarray(y, dtype=float).reshape(-1)
    n = x_arr.shape[0]
    if n < 1:
        raise ValueError("training set is empty")
    if y_arr.shape[0] != n:
        raise ValueError(f"{n} training rows but {y_arr.shape[0]} targets")
    if not np.all(np.isfinite(x_arr)):
        raise ValueError("non-finite training input")
    if not np.all(np.isfinite(y_arr)):
        raise ValueError("non-finite training target")
    if n > max_train:
        raise TrainingSizeError(
            f"{n} training rows exceed the exact-solver cap of {max_train}; "
            f"reduce the schedule or raise the cap explicitly"
        )
    k_noisy = kernel_matrix(x_arr, x_arr, hyper)
    k_noisy[np.diag_indices_from(k_noisy)] += hyper.noise
    factor, jitter = _factorize(k_noisy)
    alpha = cho_solve((factor, True), y_arr)
    return GpModel(
        hyper=hyper,
        x_train=x_arr,
        y_train=y_arr,
        factor=factor,
        alpha=alpha,
        jitter=jitter,
        config_hash=config_hash,
    )


def predict(
    model: GpModel,
    x_star: Union[np.ndarray, DescriptorMatrix],
    chunk_size: int = 1024,
) -> Prediction:
    """Posterior mean and variance at query points, in bounded-size chunks.

    The variance is the noise-free posterior variance
    k(x*, x*) - k_*^T (K + noise I)^{-1} k_*, clamped at zero against
    round-off; it never exceeds the prior variance sigma_f.
    """
    x_arr, config_hash = _as_matrix(x_star)
    if model.config_hash is not None and config_hash is not None:
        check_same_config(model.config_hash, config_hash)
    if x_arr.shape[1] != model.x_train.shape[1]:
        raise ValueError(
            f"query dimension {x_arr.shape[1]} does not match "
            f"training dimension {model.x_train.shape[1]}"
        )
    if chunk_size < 1:
        raise ValueError("chunk_size must be positive")
    n_star = x_arr.shape[0]
    mean = np.empty(n_star)
    var = np.empty(n_star)
    for start in range(0, n_star, chunk_size):
        block = x_arr[start:start + chunk_size]
        k_star = kernel_matrix(model.x_train, block, model.hyper)
        mean[start:start + chunk_size] = k_star.T @ model.alpha
        v = solve_triangular(model.factor, k_star, lower=True)
        var[start:start + chunk_size] = model.hyper.signal_variance - np.einsum(
            "ij,ij->j", v, v
        )
    np.maximum(var, 0.0, out=var)
    return Prediction(mean=mean, variance=var)


def log_marginal_likelihood_of(model: GpModel) -> float:
    """LML of the data a model was fitted on, via its stored factor."""
    n = model.n_train
    return float(
        -0.5 * float(model.y_train @ model.alpha)
        - float(np.sum(np.log(np.diag(model.factor))))
        - 0.5 * n * math.log(2.0 * math.pi)
    )


def log_marginal_likelihood(
    x: Union[np.ndarray, DescriptorMatrix],
    y: np.ndarray,
    hyper: GpHyperparams,
    max_train: int = MAX_EXACT_TRAIN,
) -> float:
    return log_marginal_likelihood_of(fit(x, y, hyper, max_train=max_train))


def _golden_max(
    f, lo: float, hi: float, tol: float = 2e-2, max_iter: int = 60
) -> tuple[float, float]:
    """Golden-section maximization of a 1-d function on [lo, hi]."""
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(max_iter):
        if b - a < tol:
            break
        if fc > fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
    return (c, fc) if fc > fd else (d, fd)


def optimize_hyperparams(
    x: Union[np.ndarray, DescriptorMatrix],
    y: np.ndarray,
    init: GpHyperparams,
    restarts: int = DEFAULT_RESTARTS,
    bounds_factor: float = DEFAULT_BOUNDS_FACTOR,
    seed: int = 0,
    max_train: int = MAX_EXACT_TRAIN,
) -> GpHyperparams:
    """Maximize the LML over (length_scale, signal_variance) in log-space.

    The search box spans bounds_factor below and above the initial values.
    Each trial (the initial point plus `restarts` log-uniform draws) runs
    coordinate-wise golden-section sweeps that only ever accept improving
    moves, so the returned LML is never below the value at `init` when that
    value is finite. Ties across trials keep the earliest trial. The noise
    level is held fixed throughout.
    """
    if restarts < 0:
        raise ValueError("restarts must be non-negative")
    if bounds_factor <= 1.0:
        raise ValueError("bounds_factor must exceed 1")
    x_arr, _ = _as_matrix(x)
    y_arr = np.asarray(y, dtype=float).reshape(-1)
    log_init = np.log([init.length_scale, init.signal_variance])
    half_width = math.log(bounds_factor)
    lo = log_init - half_width
    hi = log_init + half_width

    def objective(log_theta: np.ndarray) -> float:
        hyper = GpHyperparams(
            length_scale=math.exp(log_theta[0]),
            signal_variance=math.exp(log_theta[1]),
            noise=init.noise,
        )
        try:
            return log_marginal_likelihood(x_arr, y_arr, hyper, max_train=max_train)
        except IllConditionedError:
            return -math.inf

    rng = np.random.default_rng(seed)
    starts = [log_init]
    for _ in range(restarts):
        starts.append(rng.uniform(lo, hi))

    best_theta: Optional[np.ndarray] = None
    best_value = -math.inf
    any_finite = False
    for theta0 in starts:
        theta = np.array(theta0, dtype=float)
        value = objective(theta)
        if math.isfinite(value):
            any_finite = True
        for _ in range(10):
            improved = False
            for coord in (0, 1):

                def line(v: float, _c: int = coord) -> float:
                    trial = theta.copy()
                    trial[_c] = v
                    return objective(trial)

                cand, cand_val = _golden_max(line, lo[coord], hi[coord])
                if cand_val > value:
                    theta[coord] = cand
                    value = cand_val
                    improved = True
                    any_finite = True
            if not improved:
                break
        if value > best_value:
            best_value = value
            best_theta = theta
    if not any_finite or best_theta is None:
        raise IllConditionedError(
            "log marginal likelihood was ill-conditioned at every trial point"
        )
    return GpHyperparams(
        length_scale=math.exp(best_theta[0]),
        signal_variance=math.exp(best_theta[1]),
        noise=init.noise,
    )
