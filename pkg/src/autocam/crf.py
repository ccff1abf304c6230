"""Inverse camera response fitting and exposure/gain image synthesis.

Two boundary captures at known exposures determine an inverse response table
``g_table[z] = ln(irradiance * exposure)``.  Synthesis moves every pixel by an
operating-point shift in that log-exposure domain and maps back through the
table, so a short real capture can stand in for captures at other exposure
times and gains.  The gain axis additionally completes the noise budget:
amplified sensor noise is part of what a real high-gain capture looks like,
and the metric downstream must see it.
"""

from __future__ import annotations

import hashlib
import math
import struct
from dataclasses import dataclass

import numpy as np
from scipy import ndimage, optimize
from scipy.special import ndtr

from .attributes import CameraAttributes
from .errors import DegenerateStack, NonMonotoneFit, OutOfRange
from .imagecore import CaptureMeta, Image, Source, round_half_up

__all__ = [
    "GAIN_BASE",
    "GAIN_SHIFT_REF",
    "InverseCrf",
    "ScaleFactor",
    "fit_inverse_crf",
    "exposure_scale",
    "gain_scale",
    "scale_factor",
    "synthesize",
    "pick_seed",
    "estimate_noise_sigma",
]

# Base of the empirical gain transfer law: k_g = GAIN_BASE ** (dg / 20).
GAIN_BASE = 7.01
# Converts the gain scale onto the log-exposure axis: the table shift for a
# gain step is ln(k_g) * GAIN_SHIFT_REF.  For a sensor whose amplification
# is 10 ** (dg / 20), the exact conversion is ln(10) / ln(GAIN_BASE); this
# plays the same calibration role for the shift that the empirical base
# plays for the scale itself.
GAIN_SHIFT_REF = math.log(10.0) / math.log(GAIN_BASE)

# Isotonic projection moving any table entry further than this signals a fit
# that was not "almost monotone" to begin with.
_MONOTONE_SLACK = 0.5
_STRICT_EPS = 1e-6

# Intensities at or beyond these values are treated as clipped when building
# the fit's pixel-pair system, matching the saturation bands used by the
# image metric (<= 5 or >= 250).
_CLIP_LOW = 5
_CLIP_HIGH = 250


@dataclass(frozen=True)
class InverseCrf:
    """Fitted inverse response: log exposure as a function of intensity.

    ``g_table[z]`` is the fitted log exposure behind intensity ``z``;
    strictly increasing and finite.  ``alpha`` is the secant slope between
    the two boundary seeds in g-units per ms, ``ln_e`` the mean fitted log
    irradiance (both in the table's gauge).  ``seed_refs`` holds the
    ``(exposure_ms, mean_intensity)`` pairs of the fitted stack and
    ``t_range`` the exposure span the fit can be trusted over.
    """

    g_table: np.ndarray
    alpha: float
    ln_e: float
    lambda_smooth: float
    seed_refs: tuple[tuple[float, float], ...]
    t_range: tuple[float, float]
    # Self-calibration of the exposure shift, solved at fit time so that
    # transporting one boundary capture onto the other reproduces its mean
    # intensity exactly; corrects residual warp in the fitted table.
    calib_up: float = 1.0
    calib_down: float = 1.0

    def __post_init__(self):
        if self.g_table.shape != (256,):
            raise ValueError("g_table must have 256 entries")
        if not np.all(np.isfinite(self.g_table)):
            raise ValueError("g_table must be finite")
        if not np.all(np.diff(self.g_table) > 0):
            raise ValueError("g_table must be strictly increasing")
        self.g_table.setflags(write=False)

    def g_of(self, intensity) -> np.ndarray:
        """Log exposure at (possibly fractional) intensity values."""
        return np.interp(intensity, np.arange(256.0), self.g_table)

    def g_inverse(self, g_values) -> np.ndarray:
        """Intensity whose table entry equals ``g_values``; exact at nodes.

        Values beyond the table ends clamp to 0 or 255, which is the
        saturation behavior synthesis relies on.
        """
        return np.interp(g_values, self.g_table, np.arange(256.0))


@dataclass(frozen=True)
class ScaleFactor:
    """Dimensionless exposure and gain scales; ``k_synth`` is their product."""

    k_t: float
    k_g: float

    @property
    def k_synth(self) -> float:
        return self.k_t * self.k_g


def _sample_grid(height: int, width: int, n_samples: int) -> tuple[np.ndarray, np.ndarray]:
    # Uniform grid with at least n_samples points; rounds up to full rows.
    cols = max(2, math.ceil(math.sqrt(n_samples * width / height)))
    rows = max(2, math.ceil(n_samples / cols))
    rr = np.round(np.linspace(0, height - 1, rows)).astype(int)
    cc = np.round(np.linspace(0, width - 1, cols)).astype(int)
    grid_r, grid_c = np.meshgrid(rr, cc, indexing="ij")
    return grid_r.ravel(), grid_c.ravel()


def _hat_weight(z: np.ndarray) -> np.ndarray:
    # Triangular confidence peaking mid-range; the +1 keeps clipped pixels
    # weakly informative instead of dropping rows from the system.
    return np.minimum(z, 255 - z).astype(float) + 1.0


def _isotonic(y: np.ndarray) -> np.ndarray:
    """Pool-adjacent-violators projection onto non-decreasing sequences."""
    blocks = []  # [sum, count]
    for v in y:
        blocks.append([float(v), 1])
        while len(blocks) > 1 and (
            blocks[-2][0] * blocks[-1][1] > blocks[-1][0] * blocks[-2][1]
        ):
            s, c = blocks.pop()
            blocks[-1][0] += s
            blocks[-1][1] += c
    out = np.empty(len(y))
    i = 0
    for s, c in blocks:
        out[i : i + c] = s / c
        i += c
    return out


def _solve_shift_scale(
    g_table: np.ndarray,
    src_pixels: np.ndarray,
    dst_pixels: np.ndarray,
    log_ratio: float,
) -> float:
    """Scale on the log-exposure shift mapping one boundary image to the other.

    Transporting one boundary capture onto the other's exposure should land
    on the intensities that capture observed; residual warp in the fitted
    table shows up as a miss, and a single multiplicative correction on the
    shift absorbs it.  Only pixel sites outside the clip bands at both
    exposures take part: clipped intensities are bounds, not measurements,
    and a heavily clipped destination would otherwise accept any scale that
    shoves the bulk of the image against the rail, however short it falls
    everywhere else.  Falls back to 1 when no usable sites remain or no
    scale in range can bridge the gap.
    """
    mask = (
        (src_pixels > _CLIP_LOW)
        & (src_pixels < _CLIP_HIGH)
        & (dst_pixels > _CLIP_LOW)
        & (dst_pixels < _CLIP_HIGH)
    )
    if not mask.any():
        return 1.0
    base = g_table[src_pixels[mask]]
    target_mean = float(dst_pixels[mask].mean())
    idx = np.arange(256.0)

    def miss(c: float) -> float:
        return float(np.interp(base + c * log_ratio, g_table, idx).mean()) - target_mean

    lo, hi = 0.0, 6.0
    f_lo, f_hi = miss(lo), miss(hi)
    if f_lo == 0.0:
        return 1.0
    if f_lo * f_hi > 0:
        return 1.0
    return float(optimize.brentq(miss, lo, hi, xtol=1e-10))


def fit_inverse_crf(
    stack: list[Image], lambda_smooth: float = 50.0, n_samples: int = 64
) -> InverseCrf:
    """Fit the inverse response from a stack of same-gain captures.

    Solves the joint least-squares system over the 256 table entries and one
    log irradiance per sampled pixel location, with hat weighting
    ``min(z, 255-z) + 1`` on data rows and ``lambda_smooth``-weighted second
    differences as the smoothness prior.  The gauge anchors the table so mid
    intensity carries the mean fitted log exposure, then shifts everything up
    until the minimum entry is at least 0.5 so later slope ratios never
    divide by zero.
    """
    if len(stack) < 2:
        raise ValueError("need at least two images")
    if n_samples < 32:
        raise ValueError("need n_samples >= 32")
    exposures = [img.meta.exposure_ms for img in stack]
    if any(b <= a for a, b in zip(exposures, exposures[1:])):
        raise ValueError("stack exposures must be strictly increasing")
    gains = {img.meta.gain_db for img in stack}
    if len(gains) != 1:
        raise ValueError("stack must share a single gain")
    shape = stack[0].pixels.shape
    if any(img.pixels.shape != shape for img in stack):
        raise ValueError("stack images must share dimensions")
    if all(np.array_equal(img.pixels, stack[0].pixels) for img in stack[1:]):
        raise DegenerateStack(
            "stack images are identical; the camera response carries no "
            "exposure information (saturated or black at every exposure)"
        )

    rr, cc = _sample_grid(shape[0], shape[1], n_samples)
    log_dt = np.log(exposures)
    samples = [img.pixels[rr, cc].astype(int) for img in stack]

    # Same-location pixel pairs from consecutive exposures satisfy
    # g[z2] - g[z1] = ln(t2/t1) with the location's irradiance eliminated,
    # so the system is over the 256 table entries alone and the normal
    # equations can absorb as many samples as the grid provides.
    ata = np.zeros((256, 256))
    atb = np.zeros(256)
    n_pairs = 0
    for j in range(len(stack) - 1):
        z1, z2 = samples[j], samples[j + 1]
        # Samples in the clip bands carry no exposure relation.  The band is
        # wider than the hard endpoints because sensor noise knocks truly
        # clipped pixels a few counts inward, and those samples would anchor
        # the table's shoulder to a false correspondence.
        keep = (
            (z1 > _CLIP_LOW)
            & (z1 < _CLIP_HIGH)
            & (z2 > _CLIP_LOW)
            & (z2 < _CLIP_HIGH)
        )
        z1, z2 = z1[keep], z2[keep]
        n_pairs += int(np.count_nonzero(z1 != z2))
        log_ratio = log_dt[j + 1] - log_dt[j]
        w2 = _hat_weight(z1) * _hat_weight(z2)
        np.add.at(ata, (z1, z1), w2)
        np.add.at(ata, (z2, z2), w2)
        np.add.at(ata, (z1, z2), -w2)
        np.add.at(ata, (z2, z1), -w2)
        np.add.at(atb, z2, w2 * log_ratio)
        np.add.at(atb, z1, -w2 * log_ratio)
    if n_pairs == 0:
        raise DegenerateStack(
            "no informative pixel pairs: every sampled location is clipped "
            "or unchanged across exposures"
        )

    # Second-difference smoothness, hat-weighted at the center entry.  The
    # stencil measures curvature against log-intensity spacing, so curves of
    # the form a + b*ln(z) cost nothing: the prior prefers the gamma-law
    # family instead of flattening the dark end toward a straight line.
    u = np.log1p(np.arange(256.0))
    smooth = np.zeros((254, 256))
    for z in range(1, 255):
        w = lambda_smooth * (min(z, 255 - z) + 1.0)
        h1 = u[z] - u[z - 1]
        h2 = u[z + 1] - u[z]
        smooth[z - 1, z - 1] = w * 2.0 * h2 / (h1 + h2)
        smooth[z - 1, z] = -2.0 * w
        smooth[z - 1, z + 1] = w * 2.0 * h1 / (h1 + h2)
    ata += smooth.T @ smooth
    # Provisional gauge: pin mid intensity to zero.
    ata[128, 128] += 1.0

    g_raw = np.linalg.solve(ata, atb)

    # Per-location log irradiance, recovered from the solved table over the
    # unclipped observations of each sampled location.
    num = np.zeros(rr.size)
    cnt = np.zeros(rr.size)
    for j, z in enumerate(samples):
        ok = (z > _CLIP_LOW) & (z < _CLIP_HIGH)
        num[ok] += g_raw[z[ok]] - log_dt[j]
        cnt[ok] += 1
    ln_e_samples = num[cnt > 0] / cnt[cnt > 0]

    # Re-gauge: mid intensity carries the mean fitted log exposure, and the
    # whole table sits at or above 0.5.
    mean_g = float(np.mean(ln_e_samples)) + float(np.mean(log_dt))
    shift = mean_g - g_raw[128]
    g_gauged = g_raw + shift
    lift = max(0.0, 0.5 - float(g_gauged.min()))
    g_gauged = g_gauged + lift
    ln_e_samples = ln_e_samples + shift + lift

    g_iso = _isotonic(g_gauged)
    moved = float(np.max(np.abs(g_iso - g_gauged)))
    if moved > _MONOTONE_SLACK:
        raise NonMonotoneFit(
            f"isotonic projection moved the fit by {moved:.3f} (> "
            f"{_MONOTONE_SLACK}); the stack does not describe a monotone "
            "response"
        )
    # Break flat runs left by the projection so the table inverts cleanly.
    idx = np.arange(256.0)
    g_strict = np.maximum.accumulate(g_iso - _STRICT_EPS * idx) + _STRICT_EPS * idx

    # Boundary secant slope in g-units per ms between the two end captures.
    g_lo = float(np.interp(stack[0].mean_intensity, idx, g_strict))
    g_hi = float(np.interp(stack[-1].mean_intensity, idx, g_strict))
    alpha = (g_hi - g_lo) / (exposures[-1] - exposures[0])

    span = math.log(exposures[-1] / exposures[0])
    calib_up = _solve_shift_scale(
        g_strict, stack[0].pixels, stack[-1].pixels, span
    )
    calib_down = _solve_shift_scale(
        g_strict, stack[-1].pixels, stack[0].pixels, -span
    )

    return InverseCrf(
        g_table=g_strict,
        alpha=float(alpha),
        ln_e=float(np.mean(ln_e_samples)),
        lambda_smooth=float(lambda_smooth),
        seed_refs=tuple((float(t), img.mean_intensity) for t, img in zip(exposures, stack)),
        t_range=(float(exposures[0]), float(exposures[-1])),
        calib_up=calib_up,
        calib_down=calib_down,
    )


def exposure_scale(crf: InverseCrf, seed: Image, t_target: float) -> float:
    """Exposure scale factor from the seed's operating point.

    ``k_t`` is defined so that ``(k_t - 1) * g(seed mean)`` equals the exact
    log exposure-time ratio ``ln(t_target / t_seed)``; multiplying the seed's
    mean-intensity table value by ``k_t`` lands precisely on the target
    exposure, at every target, not just near the boundary captures.
    """
    lo, hi = crf.t_range
    if not (lo * (1 - 1e-9) <= t_target <= hi * (1 + 1e-9)):
        raise OutOfRange(
            f"target exposure {t_target} ms outside fitted range [{lo}, {hi}] ms"
        )
    g_seed = float(crf.g_of(seed.mean_intensity))
    return (math.log(t_target / seed.meta.exposure_ms) + g_seed) / g_seed


def gain_scale(g_target_db: float, g_seed_db: float) -> float:
    """Empirical gain scale: ``GAIN_BASE ** ((g_target - g_seed) / 20)``."""
    return GAIN_BASE ** ((g_target_db - g_seed_db) / 20.0)


def scale_factor(crf: InverseCrf, seed: Image, target: CameraAttributes) -> ScaleFactor:
    """Joint exposure/gain scale for synthesizing ``target`` from ``seed``."""
    return ScaleFactor(
        k_t=exposure_scale(crf, seed, target.exposure_ms),
        k_g=gain_scale(target.gain_db, seed.meta.gain_db),
    )


def estimate_noise_sigma(values: np.ndarray) -> float:
    """Noise stddev via the Laplacian residual method.

    Convolves with [[1,-2,1],[-2,4,-2],[1,-2,1]]: smooth structure mostly
    cancels while iid noise survives with stddev ``6 * sigma``.  The median
    of ``|L|`` (half-normal, median ``0.6745 * 6 * sigma``) recovers sigma
    while staying robust to edges, which land in the upper tail as long as
    they cover a minority of pixels.
    """
    arr = np.asarray(values, dtype=float)
    h, w = arr.shape
    if h < 3 or w < 3:
        return 0.0
    kernel = np.array([[1.0, -2.0, 1.0], [-2.0, 4.0, -2.0], [1.0, -2.0, 1.0]])
    lap = ndimage.convolve(arr, kernel, mode="constant")[1:-1, 1:-1]
    return float(np.median(np.abs(lap)) / (0.6744897501960817 * 6.0))


def _noise_rng(seed: Image, target: CameraAttributes) -> np.random.Generator:
    # Keyed by seed content and the requested operating point, so reruns are
    # bit-identical without any global RNG state.
    digest = hashlib.blake2b(digest_size=8)
    digest.update(seed.pixels.tobytes())
    digest.update(
        struct.pack(
            "<ddd", seed.meta.exposure_ms, target.exposure_ms, target.gain_db
        )
    )
    return np.random.default_rng(int.from_bytes(digest.digest(), "little"))


def _censored_moments(
    v: np.ndarray, sigma: float
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Moments of ``clip(N(v, sigma^2), 0, 255)`` per element.

    Closed-form censored-normal mean, stddev, and interior probability
    (the mass falling strictly between the rails).  For ``v`` well inside
    the range they collapse to ``(v, sigma, 1)``; at a rail the mean pulls
    inward and the stddev drops to ``0.583 * sigma``, the asymmetric
    pile-up a clipped sensor shows.  Because a sensor clamps its clean
    response before noise is added, callers should pass response-clamped
    values: the rail statistics hold however far past saturation the
    content sits.
    """
    a = (0.0 - v) / sigma
    b = (255.0 - v) / sigma
    pa, pb = ndtr(a), ndtr(b)
    da = np.exp(-0.5 * a * a) / math.sqrt(2.0 * math.pi)
    db = np.exp(-0.5 * b * b) / math.sqrt(2.0 * math.pi)
    p_mid = pb - pa
    mean = 255.0 * (1.0 - pb) + v * p_mid + sigma * (da - db)
    e2 = (
        255.0**2 * (1.0 - pb)
        + (v * v + sigma * sigma) * p_mid
        + sigma * (v * da - (v + 255.0) * db)
    )
    var = np.maximum(e2 - mean * mean, 0.0)
    return mean, np.sqrt(var), p_mid


def _flat_noise_sigma(arr: np.ndarray) -> float:
    """Noise floor read from the flattest neighborhoods of an image.

    A whole-frame Laplacian median drifts upward when scene texture
    contaminates a sizable share of pixels, and synthesis must not amplify
    texture as if it were sensor noise.  Tiling the frame and taking a low
    quantile of per-tile medians reads the floor where the scene is flat;
    rail pixels are excluded because clipping crushes their fluctuations.
    Falls back to the whole-frame estimate when too few clean tiles exist.
    """
    h, w = arr.shape
    fallback = estimate_noise_sigma(arr)
    if h < 16 or w < 16:
        return fallback
    a = arr.astype(np.float64)
    kernel = np.array([[1.0, -2.0, 1.0], [-2.0, 4.0, -2.0], [1.0, -2.0, 1.0]])
    lap = np.abs(ndimage.convolve(a, kernel, mode="constant"))
    interior = (a > 0.0) & (a < 255.0)
    core = ndimage.binary_erosion(interior, structure=np.ones((3, 3), bool))
    core[0, :] = core[-1, :] = core[:, 0] = core[:, -1] = False
    tile = 8
    medians = []
    for i in range(0, h - tile + 1, tile):
        for j in range(0, w - tile + 1, tile):
            sel = core[i : i + tile, j : j + tile]
            if sel.sum() >= 24:
                medians.append(np.median(lap[i : i + tile, j : j + tile][sel]))
    if len(medians) < 4:
        return fallback
    q = float(np.percentile(medians, 25.0)) / (0.6744897501960817 * 6.0)
    return min(q, fallback)


def synthesize(seed: Image, crf: InverseCrf, target: CameraAttributes) -> Image:
    """Synthesize a capture at ``target`` attributes from a real seed image.

    Pixels move through the fitted table: each intensity's log exposure gets
    the operating-point shift implied by the exposure and gain scale factors,
    then maps back through the inverted table.  The result is then shaped by
    the sensor's clipped-noise statistics: a working-resolution pixel at
    scale ``s`` is the mean of ``s*s`` sensor pixels, each clipped to
    [0, 255] around the transported value with the noise floor the target
    amplification implies, so near the rails the synthetic image shows the
    same pile-up and softened texture a real capture does.  The noise floor
    itself is completed in quadrature: the transport already carries the
    seed's stretched noise, and only the per-pixel shortfall is injected,
    from a generator keyed to the seed content so reruns are bit-identical.
    At the seed's own attributes the output is the seed, pixel for pixel.
    """
    scales = scale_factor(crf, seed, target)
    g_seed = float(crf.g_of(seed.mean_intensity))
    shift_t = (scales.k_t - 1.0) * g_seed
    if shift_t > 0:
        shift_t *= crf.calib_up
    elif shift_t < 0:
        shift_t *= crf.calib_down
    shift_g = math.log(scales.k_g) * GAIN_SHIFT_REF
    shift = shift_t + shift_g

    if shift == 0.0:
        pixels = seed.pixels.copy()
    else:
        v = crf.g_inverse(crf.g_table[seed.pixels] + shift)

        dg = target.gain_db - seed.meta.gain_db
        scale = seed.meta.scale
        sigma_seed = _flat_noise_sigma(seed.pixels)
        sigma_target = sigma_seed * 10.0 ** (dg / 20.0)
        if sigma_target > 0.0:
            mean, s_block, p_mid = _censored_moments(v, sigma_target * scale)
            s_block /= scale
            # The seed floor rides the transported values only where the
            # response clamp has not flattened them, and the rail censoring
            # attenuates what survives by the interior probability.  The
            # injection completes each pixel to its censored stddev, so
            # flat saturated regions still get their real-capture mottle
            # even when the interior carries a surplus.  The carried term
            # uses the same texture-rejecting floor estimate as the target:
            # transported scene texture is content, not carried noise, and
            # counting it would starve the completion.
            interior = (v > 0.0) & (v < 255.0)
            sigma_carried = _flat_noise_sigma(v)
            carried = np.where(interior, sigma_carried * p_mid, 0.0)
            inject = np.sqrt(np.maximum(s_block * s_block - carried * carried, 0.0))
            rng = _noise_rng(seed, target)
            vals = mean + rng.standard_normal(v.shape) * inject
        else:
            vals = v
        pixels = np.clip(round_half_up(vals), 0, 255).astype(np.uint8)

    meta = CaptureMeta(
        exposure_ms=target.exposure_ms,
        gain_db=target.gain_db,
        source=Source.SYNTHETIC,
        lux=seed.meta.lux,
        scale=seed.meta.scale,
    )
    return Image(pixels=pixels, meta=meta)


# A seed with more than this fraction of its pixels in the clip bands has
# lost too much of the scene to anchor a transport; clipped intensities are
# bounds, not measurements.
_SEED_CLIP_LIMIT = 0.25


def _clip_fraction(img: Image) -> float:
    px = img.pixels
    return float(np.mean((px <= _CLIP_LOW) | (px >= _CLIP_HIGH)))


def pick_seed(seeds: list[Image], target: CameraAttributes) -> Image:
    """Seed whose exposure is closest to the target in log ratio.

    Ties break toward the shorter exposure.  Seeds with over a quarter of
    their pixels clipped are passed over when a usable alternative exists:
    transported clip values are guesses, and a mostly clipped seed produces
    a mostly guessed synthesis.
    """
    if not seeds:
        raise ValueError("need at least one seed")
    usable = [s for s in seeds if _clip_fraction(s) <= _SEED_CLIP_LIMIT]
    return min(
        usable or seeds,
        key=lambda s: (
            abs(math.log(target.exposure_ms / s.meta.exposure_ms)),
            s.meta.exposure_ms,
        ),
    )
