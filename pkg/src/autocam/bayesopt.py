"""Gaussian-process surrogate and maximum-variance acquisition.

The optimizer models the score surface over the unit square of normalized
(exposure, gain) coordinates with a squared-exponential kernel.  Queries are
cheap synthetic evaluations, so the acquisition is pure exploration: each
iteration samples wherever the posterior is least certain, and the final
answer is read off the posterior mean.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import product
from typing import Sequence

import numpy as np
from scipy import linalg

from .attributes import AttributeBounds, CameraAttributes
from .errors import SingularKernel

__all__ = [
    "AttributePoint",
    "GpHyperParams",
    "GpModel",
    "DEFAULT_HYPERPARAMS",
    "se_kernel",
    "fit",
    "posterior",
    "posterior_batch",
    "log_marginal_likelihood",
    "select_hyperparams",
    "acquire_max_variance",
]

# Log-spaced hyperparameter search grid, iterated in this order with strict
# improvement, so ties resolve to the earliest combination.
_LENGTH_GRID = (0.05, 0.1, 0.2, 0.4, 0.8)
_SIGNAL_GRID = (0.5, 1.0, 2.0)
_NOISE_GRID = (1e-4, 1e-3, 1e-2)

_JITTERS = (0.0, 1e-8, 1e-7, 1e-6, 1e-5, 1e-4)
_DUPLICATE_TOL = 1e-9


@dataclass(frozen=True)
class AttributePoint:
    """A camera control point together with its unit-square coordinates."""

    exposure_ms: float
    gain_db: float
    normalized: tuple[float, float]

    @classmethod
    def from_attrs(cls, attrs: CameraAttributes, bounds: AttributeBounds) -> "AttributePoint":
        u, v = bounds.normalize(attrs)
        return cls(
            exposure_ms=attrs.exposure_ms,
            gain_db=attrs.gain_db,
            normalized=(float(u), float(v)),
        )

    def to_attrs(self) -> CameraAttributes:
        return CameraAttributes(exposure_ms=self.exposure_ms, gain_db=self.gain_db)


def attribute_grid(bounds: AttributeBounds, n_exposure: int, n_gain: int) -> list[AttributePoint]:
    """Candidate grid in exposure-major order (gain varies fastest)."""
    return [
        AttributePoint.from_attrs(a, bounds) for a in bounds.grid(n_exposure, n_gain)
    ]


@dataclass(frozen=True)
class GpHyperParams:
    """Kernel and observation-noise parameters in normalized units."""

    length_scales: tuple[float, float]
    signal_var: float
    noise_var: float

    def __post_init__(self):
        if len(self.length_scales) != 2 or any(l <= 0 for l in self.length_scales):
            raise ValueError("length_scales must be two positive values")
        if self.signal_var < 0:
            raise ValueError("signal_var must be >= 0")
        if self.noise_var < 1e-8:
            raise ValueError("noise_var must be >= 1e-8")


DEFAULT_HYPERPARAMS = GpHyperParams(length_scales=(0.2, 0.2), signal_var=1.0, noise_var=1e-3)


def se_kernel(a, b, hyper: GpHyperParams) -> float:
    """Squared-exponential covariance between two normalized points."""
    d0 = (a[0] - b[0]) / hyper.length_scales[0]
    d1 = (a[1] - b[1]) / hyper.length_scales[1]
    return hyper.signal_var * math.exp(-0.5 * (d0 * d0 + d1 * d1))


def _normalized_array(points: Sequence[AttributePoint]) -> np.ndarray:
    return np.array([p.normalized for p in points], dtype=float).reshape(len(points), 2)


def _kernel_matrix(xa: np.ndarray, xb: np.ndarray, hyper: GpHyperParams) -> np.ndarray:
    ls = np.asarray(hyper.length_scales, dtype=float)
    diff = (xa[:, None, :] - xb[None, :, :]) / ls
    return hyper.signal_var * np.exp(-0.5 * np.sum(diff * diff, axis=-1))


def _standardize(scores: Sequence[float]) -> tuple[np.ndarray, float, float]:
    """Zero-mean unit-variance targets once two or more observations exist.

    A single observation is used raw, and constant targets center to zeros
    without rescaling.
    """
    y = np.asarray(scores, dtype=float)
    if y.size < 2:
        return y.copy(), 0.0, 1.0
    mean = float(y.mean())
    std = float(y.std())
    if std < 1e-12:
        std = 1.0
    return (y - mean) / std, mean, std


def _factorize(k_noisy: np.ndarray) -> tuple[np.ndarray, float]:
    """Cholesky factor with escalating diagonal jitter; raises past 1e-4."""
    n = k_noisy.shape[0]
    for jitter in _JITTERS:
        try:
            chol = linalg.cholesky(k_noisy + jitter * np.eye(n), lower=True)
            return chol, jitter
        except linalg.LinAlgError:
            continue
    raise SingularKernel(
        "kernel matrix is not positive definite even with 1e-4 jitter"
    )


def _check_duplicates(xn: np.ndarray) -> None:
    if len(xn) < 2:
        return
    diff = xn[:, None, :] - xn[None, :, :]
    dist = np.sqrt(np.sum(diff * diff, axis=-1))
    dist[np.diag_indices(len(xn))] = np.inf
    if dist.min() < _DUPLICATE_TOL:
        raise ValueError(
            "duplicate training points closer than 1e-9 in normalized space"
        )


@dataclass(frozen=True)
class GpModel:
    """Immutable fitted surrogate with a cached Cholesky factorization."""

    train_x: tuple[AttributePoint, ...]
    train_y: tuple[float, ...]
    hyper: GpHyperParams
    chol: np.ndarray
    alpha: np.ndarray
    y_mean: float
    y_std: float
    train_norm: np.ndarray

    def __post_init__(self):
        self.chol.setflags(write=False)
        self.alpha.setflags(write=False)
        self.train_norm.setflags(write=False)


def fit(
    points: Sequence[AttributePoint],
    scores: Sequence[float],
    hyper: GpHyperParams = DEFAULT_HYPERPARAMS,
) -> GpModel:
    """Condition the surrogate on observed evaluations."""
    if len(points) < 1:
        raise ValueError("need at least one training pair")
    if len(points) != len(scores):
        raise ValueError("points and scores must have equal length")
    xn = _normalized_array(points)
    _check_duplicates(xn)
    y_std_vec, y_mean, y_std = _standardize(scores)
    k = _kernel_matrix(xn, xn, hyper)
    chol, _ = _factorize(k + hyper.noise_var * np.eye(len(points)))
    alpha = linalg.cho_solve((chol, True), y_std_vec)
    return GpModel(
        train_x=tuple(points),
        train_y=tuple(float(s) for s in scores),
        hyper=hyper,
        chol=chol,
        alpha=alpha,
        y_mean=y_mean,
        y_std=y_std,
        train_norm=xn,
    )


def posterior_batch(model: GpModel, queries: Sequence[AttributePoint]) -> tuple[np.ndarray, np.ndarray]:
    """Posterior mean and latent variance at many points, de-standardized.

    The variance is that of the noise-free latent surface, so a revisited
    training point reports near-zero uncertainty rather than the observation
    noise floor.
    """
    qn = _normalized_array(queries)
    k_star = _kernel_matrix(qn, model.train_norm, model.hyper)
    mean_std = k_star @ model.alpha
    v = linalg.solve_triangular(model.chol, k_star.T, lower=True)
    var_std = model.hyper.signal_var - np.sum(v * v, axis=0)
    var_std = np.maximum(var_std, 0.0)
    return model.y_mean + model.y_std * mean_std, model.y_std**2 * var_std


def posterior(model: GpModel, query: AttributePoint) -> tuple[float, float]:
    """Posterior mean and variance at one point, in score units."""
    means, variances = posterior_batch(model, [query])
    return float(means[0]), float(variances[0])


def log_marginal_likelihood(
    points: Sequence[AttributePoint],
    scores: Sequence[float],
    hyper: GpHyperParams,
) -> float:
    """Log evidence of the standardized targets under the kernel.

    Unlike ``fit``, coincident points are allowed here: the noise term keeps
    the system well posed, and scoring a candidate set that repeats an
    observation is legitimate.
    """
    if len(points) < 1:
        raise ValueError("need at least one training pair")
    if len(points) != len(scores):
        raise ValueError("points and scores must have equal length")
    xn = _normalized_array(points)
    y_std_vec, _, _ = _standardize(scores)
    k = _kernel_matrix(xn, xn, hyper)
    chol, _ = _factorize(k + hyper.noise_var * np.eye(len(points)))
    alpha = linalg.cho_solve((chol, True), y_std_vec)
    n = len(points)
    return float(
        -0.5 * y_std_vec @ alpha
        - np.log(np.diag(chol)).sum()
        - 0.5 * n * math.log(2.0 * math.pi)
    )


def select_hyperparams(
    points: Sequence[AttributePoint], scores: Sequence[float]
) -> GpHyperParams:
    """Grid-search hyperparameters by log marginal likelihood.

    The grid is scanned in a fixed order and only strict improvements move
    the choice, so equally likely combinations resolve to the earliest one.
    """
    if len(points) < 3:
        raise ValueError("need at least three training pairs")
    y_std_vec, _, _ = _standardize(scores)
    if not np.any(y_std_vec):
        # Constant targets standardize to zeros and carry no evidence about
        # the kernel; the determinant term alone would arbitrarily prefer
        # the longest length scale.  Treat every combination as tied.
        return GpHyperParams(
            length_scales=(_LENGTH_GRID[0], _LENGTH_GRID[0]),
            signal_var=_SIGNAL_GRID[0],
            noise_var=_NOISE_GRID[0],
        )
    best: GpHyperParams | None = None
    best_lml = -math.inf
    for l0, l1, sv, nv in product(_LENGTH_GRID, _LENGTH_GRID, _SIGNAL_GRID, _NOISE_GRID):
        hyper = GpHyperParams(length_scales=(l0, l1), signal_var=sv, noise_var=nv)
        lml = log_marginal_likelihood(points, scores, hyper)
        if lml > best_lml:
            best_lml = lml
            best = hyper
    assert best is not None
    return best


def acquire_max_variance(
    model: GpModel | None, candidates: Sequence[AttributePoint]
) -> AttributePoint:
    """Candidate with the largest posterior variance.

    With no model yet every candidate is equally uncertain under the prior,
    and the first grid point wins.  Once candidates sit more than a few
    length scales from every observation their variances agree to within
    floating-point noise, and raw argmax order would herd the design toward
    low grid indices.  Near-ties are therefore broken by distance to the
    nearest observation, which turns the early iterations into farthest
    point coverage of the grid; exact remaining ties resolve to the
    earliest candidate.
    """
    if len(candidates) == 0:
        raise ValueError("need at least one candidate")
    if model is None:
        return candidates[0]
    _, variances = posterior_batch(model, candidates)
    best = float(np.max(variances))
    tied = np.flatnonzero(variances >= best * (1.0 - 1e-6))
    if len(tied) == 1:
        return candidates[int(tied[0])]
    cn = _normalized_array([candidates[int(i)] for i in tied])
    diff = cn[:, None, :] - model.train_norm[None, :, :]
    min_d2 = np.min(np.sum(diff * diff, axis=-1), axis=1)
    return candidates[int(tied[int(np.argmax(min_d2))])]
