"""Closed-loop exposure/gain selection over synthetic evaluations.

The loop captures two real boundary images, fits the inverse response, and
then explores the attribute space entirely through synthesis: every further
metric evaluation happens on a synthetic image, so the camera is touched at
most once more, to verify the chosen operating point.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Protocol, Sequence, runtime_checkable

import numpy as np

from .attributes import AttributeBounds, CameraAttributes
from .bayesopt import (
    DEFAULT_HYPERPARAMS,
    AttributePoint,
    GpModel,
    acquire_max_variance,
    attribute_grid,
    fit,
    posterior_batch,
    select_hyperparams,
)
from .crf import fit_inverse_crf, pick_seed, synthesize
from .errors import OutOfRange
from .imagecore import Image, downsample
from .metric import MetricConfig, newg

__all__ = [
    "CameraInterface",
    "ControlConfig",
    "IterationRecord",
    "ControlResult",
    "run",
    "exhaustive_reference",
]


@runtime_checkable
class CameraInterface(Protocol):
    """Anything that can capture frames at requested attributes."""

    def capture(self, attrs: CameraAttributes) -> Image: ...

    def bounds(self) -> AttributeBounds: ...


@dataclass(frozen=True)
class ControlConfig:
    """Tunable parameters of one control episode."""

    t_min: float = 1.0
    t_max: float = 20.0
    g_min: float = 0.0
    g_max: float = 12.0
    budget: int = 10
    # Stop once the surrogate's largest posterior stddev over the candidate
    # grid, in standardized score units, falls below this.
    var_stop: float = 0.05
    downsample_factor: int = 4
    metric: MetricConfig = field(default_factory=MetricConfig)
    verify_with_real_capture: bool = True
    n_grid_exposure: int = 40
    n_grid_gain: int = 25
    # Smoothness weight for the in-loop response fit.  The boundary captures
    # are noisy single frames, so the fit leans harder on the smoothness
    # prior than the library default intended for clean stacks.
    crf_lambda_smooth: float = 1000.0

    def __post_init__(self):
        if not self.t_min < self.t_max:
            raise ValueError("need t_min < t_max")
        if self.g_min > self.g_max:
            raise ValueError("need g_min <= g_max")
        if self.budget < 1:
            raise ValueError("budget must be >= 1")
        if self.downsample_factor < 1:
            raise ValueError("downsample_factor must be >= 1")
        if not self.var_stop > 0:
            raise ValueError("var_stop must be positive")
        if self.n_grid_exposure < 2 or self.n_grid_gain < 1:
            raise ValueError("candidate grid too small")

    def attribute_bounds(self) -> AttributeBounds:
        return AttributeBounds(self.t_min, self.t_max, self.g_min, self.g_max)


@dataclass(frozen=True)
class IterationRecord:
    """One optimization step: what was probed and what the surrogate said."""

    index: int
    attrs: CameraAttributes
    score: float
    post_mean_max: float
    post_var_max: float


@dataclass(frozen=True)
class ControlResult:
    """Outcome of a control episode."""

    best: CameraAttributes
    best_score: float
    trace: tuple[IterationRecord, ...]
    wall_times: dict[str, float]
    real_evals: int
    synth_evals: int


def _maybe_downsample(img: Image, factor: int) -> Image:
    return img if factor == 1 else downsample(img, factor)


def run(cam: CameraInterface, cfg: ControlConfig = ControlConfig()) -> ControlResult:
    """Run one control episode and return the chosen attributes.

    Exactly two real captures happen before the loop (the exposure
    boundaries at the minimum gain) and at most one after (verification at
    the winner, when enabled).  Everything in between is synthetic.
    """
    cam_bounds = cam.bounds()
    cfg_bounds = cfg.attribute_bounds()
    for attrs in (
        CameraAttributes(cfg.t_min, cfg.g_min),
        CameraAttributes(cfg.t_max, cfg.g_max),
    ):
        if not cam_bounds.contains(attrs):
            raise OutOfRange(
                f"configured range {cfg_bounds} exceeds camera bounds {cam_bounds}"
            )

    wall: dict[str, float] = {}
    t0 = time.perf_counter()
    seed_lo = cam.capture(CameraAttributes(cfg.t_min, cfg.g_min))
    seed_hi = cam.capture(CameraAttributes(cfg.t_max, cfg.g_min))
    real_evals = 2
    wall["capture_seeds"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    seeds = [
        _maybe_downsample(seed_lo, cfg.downsample_factor),
        _maybe_downsample(seed_hi, cfg.downsample_factor),
    ]
    crf = fit_inverse_crf(
        seeds, lambda_smooth=cfg.crf_lambda_smooth, n_samples=seeds[0].pixel_count
    )
    wall["fit_crf"] = time.perf_counter() - t0

    grid = attribute_grid(cfg_bounds, cfg.n_grid_exposure, cfg.n_grid_gain)

    t0 = time.perf_counter()
    points: list[AttributePoint] = []
    scores: list[float] = []
    trace: list[IterationRecord] = []
    model: GpModel | None = None
    sampled: set[int] = set()
    for index in range(cfg.budget):
        remaining = [c for i, c in enumerate(grid) if i not in sampled]
        if not remaining:
            break
        candidate = acquire_max_variance(model, remaining)
        sampled.add(grid.index(candidate))
        target = candidate.to_attrs()
        synthetic = synthesize(pick_seed(seeds, target), crf, target)
        score = newg(synthetic, cfg.metric).newg
        points.append(candidate)
        scores.append(score)
        hyper = (
            select_hyperparams(points, scores)
            if len(points) >= 5
            else DEFAULT_HYPERPARAMS
        )
        model = fit(points, scores, hyper)
        post_means, post_vars = posterior_batch(model, grid)
        trace.append(
            IterationRecord(
                index=index,
                attrs=target,
                score=score,
                post_mean_max=float(post_means.max()),
                post_var_max=float(post_vars.max()),
            )
        )
        max_std_units = float(np.sqrt(post_vars.max())) / model.y_std
        if max_std_units < cfg.var_stop:
            break
    wall["optimize"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    post_means, _ = posterior_batch(model, grid)
    best_idx = int(np.argmax(post_means))
    best = grid[best_idx].to_attrs()
    best_score = float(post_means[best_idx])
    wall["select"] = time.perf_counter() - t0

    if cfg.verify_with_real_capture:
        t0 = time.perf_counter()
        verification = cam.capture(best)
        real_evals += 1
        best_score = newg(
            _maybe_downsample(verification, cfg.downsample_factor), cfg.metric
        ).newg
        wall["verify"] = time.perf_counter() - t0

    return ControlResult(
        best=best,
        best_score=best_score,
        trace=tuple(trace),
        wall_times=wall,
        real_evals=real_evals,
        synth_evals=len(trace),
    )


def exhaustive_reference(
    cam: CameraInterface,
    cfg: ControlConfig = ControlConfig(),
    grid: Sequence[CameraAttributes] | None = None,
) -> tuple[CameraAttributes, list[tuple[CameraAttributes, float]]]:
    """Real capture and metric at every grid point; the ground-truth surface.

    Only sensible against a cost-free backend.  Returns the argmax and the
    full ``(attrs, score)`` surface in grid order; ties break to the
    earliest grid point.
    """
    if grid is None:
        grid = cfg.attribute_bounds().grid(cfg.n_grid_exposure, cfg.n_grid_gain)
    surface: list[tuple[CameraAttributes, float]] = []
    for attrs in grid:
        img = _maybe_downsample(cam.capture(attrs), cfg.downsample_factor)
        surface.append((attrs, newg(img, cfg.metric).newg))
    best = max(surface, key=lambda pair: pair[1])
    return best[0], surface
