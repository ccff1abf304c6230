"""Noise-aware image information metric.

The score rewards gradient energy where the local neighborhood actually
carries information (entropy weighting), charges saturated pixels against
that energy, and subtracts a penalty that grows as the measured image SNR
falls below a reference level.  Higher is better; the score drives the
exposure/gain search.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .imagecore import Image, gradient_magnitude_sq, local_entropy, patch_stats

__all__ = ["MetricConfig", "MetricScore", "image_snr_db", "ewg", "snr_penalty", "newg"]

# Patches this close to black carry no usable ratio and are discarded.
_PATCH_MEAN_FLOOR = 1.0
# Patch stddev is clamped up to this to keep ratios finite on constant tiles.
_PATCH_STD_FLOOR = 1e-3


@dataclass(frozen=True)
class MetricConfig:
    """Tuning knobs for the information metric.

    ``kappa`` balances the SNR penalty against the gradient term; the penalty
    references ``snr_ref_db``.  Pixels at or beyond the saturation thresholds
    count as saturated.  ``activation_steepness`` and ``activation_center``
    shape the logistic gate that lets the saturation charge act only where
    local entropy suggests real structure.
    """

    kappa: float = 5.0
    snr_ref_db: float = 20.0
    sat_high: int = 250
    sat_low: int = 5
    entropy_window: int = 5
    activation_steepness: float = 20.0
    activation_center: float = 0.5
    snr_patch: int = 16

    def __post_init__(self):
        if self.kappa <= 0:
            raise ValueError("kappa must be positive")
        if self.snr_ref_db <= 0:
            raise ValueError("snr_ref_db must be positive")
        if not 0 <= self.sat_low < self.sat_high <= 255:
            raise ValueError("need 0 <= sat_low < sat_high <= 255")


@dataclass(frozen=True)
class MetricScore:
    """Metric decomposition for one image.

    ``newg == g_t - g_k / kappa`` exactly, where ``g_t`` is the
    entropy-weighted gradient total and ``g_k`` the SNR penalty.
    """

    g_t: float
    g_k: float
    newg: float
    snr_db: float
    mean_grad: float


def image_snr_db(img: Image, cfg: MetricConfig = MetricConfig()) -> float:
    """Image SNR in dB from the median patch mean/stddev ratio.

    Patches darker than a 1-intensity mean are discarded; patch stddev is
    clamped below at 1e-3 so constant patches give a large finite ratio.
    Returns the reference SNR when every patch is discarded, leaving the
    penalty term neutral on effectively black frames.
    """
    ratios = []
    for mean, std in patch_stats(img, cfg.snr_patch):
        if mean < _PATCH_MEAN_FLOOR:
            continue
        ratios.append(mean / max(std, _PATCH_STD_FLOOR))
    if not ratios:
        return cfg.snr_ref_db
    return 20.0 * math.log10(float(np.median(ratios)))


def ewg(img: Image, cfg: MetricConfig = MetricConfig()) -> float:
    """Entropy-weighted gradient total with a gated saturation charge.

    Per pixel the score accumulates ``W * |grad|^2`` where ``W`` is the
    normalized local entropy, and saturated pixels give back
    ``pi(H) * W * mean_grad`` where ``pi`` is a logistic gate on the same
    entropy value.  Without saturated pixels the result is non-negative.
    """
    grad = gradient_magnitude_sq(img).values
    entropy = local_entropy(img, cfg.entropy_window)
    mean_grad = float(grad.mean())
    gate = 1.0 / (
        1.0
        + np.exp(-cfg.activation_steepness * (entropy - cfg.activation_center))
    )
    saturated = (img.pixels >= cfg.sat_high) | (img.pixels <= cfg.sat_low)
    mask = np.where(saturated, -1.0, 0.0)
    positive = float(np.sum(entropy * grad))
    charge = float(np.sum(gate * mask * entropy)) * mean_grad
    return positive + charge


def snr_penalty(img: Image, cfg: MetricConfig = MetricConfig()) -> float:
    """Penalty that scales gradient energy by the SNR shortfall.

    ``N * (1 - snr_db / snr_ref_db) * mean_grad``; negative when the image is
    cleaner than the reference, which acts as a quality bonus.
    """
    grad = gradient_magnitude_sq(img).values
    snr_db = image_snr_db(img, cfg)
    return img.pixel_count * (1.0 - snr_db / cfg.snr_ref_db) * float(grad.mean())


def newg(img: Image, cfg: MetricConfig = MetricConfig()) -> MetricScore:
    """Full metric: entropy-weighted gradient minus the scaled SNR penalty."""
    g_t = ewg(img, cfg)
    g_k = snr_penalty(img, cfg)
    grad = gradient_magnitude_sq(img).values
    return MetricScore(
        g_t=g_t,
        g_k=g_k,
        newg=g_t - g_k / cfg.kappa,
        snr_db=image_snr_db(img, cfg),
        mean_grad=float(grad.mean()),
    )
