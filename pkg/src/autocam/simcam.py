"""Synthetic camera: gamma-law sensor forward model plus a scene library.

The forward model converts scene irradiance to 8-bit intensities through a
saturating gamma response, then adds gain-amplified read noise and
intensity-dependent shot noise.  Captures are deterministic given the sensor
seed and a per-capture counter, which makes every downstream run replayable
bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .attributes import AttributeBounds, CameraAttributes
from .errors import CaptureFailed
from .imagecore import CaptureMeta, Image, Source, round_half_up

__all__ = [
    "SimulatedScene",
    "SensorModel",
    "simulate_capture",
    "analytic_log_exposure",
    "scene_suite",
    "get_scene",
    "standard_sensor",
    "SimulatedCamera",
]

SCENE_WIDTH = 256
SCENE_HEIGHT = 192


@dataclass(frozen=True)
class SimulatedScene:
    """Scene irradiance map (relative units) with a brightness scale."""

    name: str
    irradiance: np.ndarray = field(repr=False)
    lux_scale: float

    def __post_init__(self):
        if self.irradiance.ndim != 2 or np.any(self.irradiance < 0):
            raise ValueError("irradiance must be a non-negative 2-D array")
        if self.lux_scale <= 0:
            raise ValueError("lux_scale must be positive")
        self.irradiance.setflags(write=False)


@dataclass(frozen=True)
class SensorModel:
    """Sensor response and noise parameters.

    ``x_sat`` is the saturating exposure in irradiance * ms units; intensities
    follow ``255 * (X / x_sat) ** (1 / gamma)`` below saturation.  Noise is
    ``read_noise_sigma`` amplified linearly with gain plus
    ``shot_noise_coeff * sqrt(intensity)``, both in 8-bit intensity units.
    """

    x_sat: float
    gamma: float = 2.2
    read_noise_sigma: float = 1.5
    shot_noise_coeff: float = 0.3
    rng_seed: int = 0

    def __post_init__(self):
        if self.x_sat <= 0 or self.gamma <= 0:
            raise ValueError("x_sat and gamma must be positive")
        if self.read_noise_sigma < 0 or self.shot_noise_coeff < 0:
            raise ValueError("noise coefficients must be non-negative")
        if self.rng_seed < 0:
            raise ValueError("rng_seed must be non-negative")


def simulate_capture(
    scene: SimulatedScene,
    sensor: SensorModel,
    attrs: CameraAttributes,
    capture_index: int = 0,
) -> Image:
    """Simulate one capture of ``scene`` at the given attributes.

    The RNG stream is keyed by ``(sensor.rng_seed, capture_index)``: replaying
    the same capture index reproduces the exact frame, while consecutive
    captures get independent noise.
    """
    amp = 10.0 ** (attrs.gain_db / 20.0)
    exposure = scene.irradiance * (scene.lux_scale * attrs.exposure_ms * amp)
    clean = 255.0 * (np.minimum(exposure, sensor.x_sat) / sensor.x_sat) ** (
        1.0 / sensor.gamma
    )
    sigma = sensor.read_noise_sigma * amp + sensor.shot_noise_coeff * np.sqrt(clean)
    rng = np.random.default_rng([sensor.rng_seed, int(capture_index)])
    noisy = clean + rng.standard_normal(clean.shape) * sigma
    pixels = np.clip(round_half_up(noisy), 0, 255).astype(np.uint8)
    meta = CaptureMeta(
        exposure_ms=attrs.exposure_ms,
        gain_db=attrs.gain_db,
        source=Source.SIMULATED,
        lux=scene.lux_scale,
    )
    return Image(pixels=pixels, meta=meta)


def analytic_log_exposure(sensor: SensorModel, intensities) -> np.ndarray:
    """Exact log-exposure ``ln X`` behind each unsaturated intensity.

    Inverts the clean response: ``ln X = ln x_sat + gamma * ln(z / 255)``.
    Defined for intensities in (0, 255].
    """
    z = np.asarray(intensities, dtype=np.float64)
    if np.any(z <= 0):
        raise ValueError("analytic inverse is undefined at intensity 0")
    return np.log(sensor.x_sat) + sensor.gamma * np.log(z / 255.0)


# ---------------------------------------------------------------------------
# scene library
# ---------------------------------------------------------------------------

def _checker_pattern() -> np.ndarray:
    # 32 px squares carrying 16 geometrically spaced levels (12:1 span,
    # ~18% per step).  Neighboring squares differ by a handful of steps, so
    # the texture resolves only where the response is steep: under-exposed,
    # the fine contrasts sink below the noise floor; over-exposed, the top
    # levels clip together.  That pins the metric's optimum to a narrow
    # brightness band instead of a flat ridge.  Squares stay aligned with
    # 16 px metric patches after factor-4 down-sampling (8 px each).
    yy, xx = np.indices((SCENE_HEIGHT, SCENE_WIDTH))
    idx = (3 * (yy // 32) + 7 * (xx // 32)) % 16
    levels = 0.10 * (12.0 ** (1.0 / 15.0)) ** np.arange(16)
    return levels[idx]


def _ramp_pattern() -> np.ndarray:
    # Left-to-right irradiance sweep crossed with 16 px stripe texture.  The
    # sweep decides which column band sits in the response's steep region at
    # a given exposure product; the stripes survive factor-4 down-sampling
    # as 4 px bands, so local entropy stays anchored to structure rather
    # than to sensor noise.  A texture-free sweep was tried and rejected:
    # without structure the score surface is a flat ridge whose argmax
    # wanders many grid steps between noise realizations, and no synthesis
    # can transfer an argmax the scene itself does not pin down.
    yy, xx = np.indices((SCENE_HEIGHT, SCENE_WIDTH))
    sweep = 0.06 + 1.10 * (xx / (SCENE_WIDTH - 1))
    stripes = np.where((yy // 16) % 2 == 0, 1.30, 0.72)
    return sweep * stripes


def _window_pattern() -> np.ndarray:
    # Smooth dim walls, a bright "window" pane, and a fine mosaic band along
    # the bottom quarter.  The smooth walls dominate the metric's patch
    # census, so patch SNR is noise-governed and actually falls as gain
    # rises; the mosaic supplies the gradient mass that prices that fall.
    # This is the family that splits the noise-aware score from the plain
    # entropy-weighted one: the plain score chases noise-pumped gradients
    # up the gain axis, while the noise-aware score holds gain low and buys
    # brightness with exposure instead.  The pane saturates far below the
    # wall's preferred exposure, keeping the clipping trade-off in play.
    # The pane is itself a coarse mosaic rather than one flat level: a flat
    # pane rails into a zero-entropy block the clipping term ignores, while
    # mosaic tiles cross saturation one by one as gain rises with live
    # neighbors keeping local entropy up, so over-exposure is priced
    # smoothly instead of all at once.
    yy, xx = np.indices((SCENE_HEIGHT, SCENE_WIDTH))
    base = np.full((SCENE_HEIGHT, SCENE_WIDTH), 0.0317)
    pane_idx = (5 * (yy // 16) + 3 * (xx // 16)) % 16
    pane_levels = 2.0 * 1.25 ** (np.arange(16) / 15.0)
    pane = pane_levels[pane_idx]
    base[16:80, 128:192] = pane[16:80, 128:192]
    # Band levels are split into a dim half and a near-saturation half.
    # The dim tiles keep rewarding extra light across the whole useful
    # exposure range; the bright tiles rail in quick succession once gain
    # overshoots, giving the score a deterministic cliff instead of a
    # noise-decided tie between adjacent gain settings.
    idx = (3 * (yy // 24) + 7 * (xx // 24)) % 16
    low = 0.08 * (4.375 ** (1.0 / 7.0)) ** np.arange(8)
    high = 0.65 * ((1.0 / 0.65) ** (1.0 / 7.0)) ** np.arange(8)
    levels = np.concatenate([low, high])
    band = levels[idx]
    base[144:, :] = band[144:, :]
    return base


_PATTERNS = {
    "checker": _checker_pattern,
    "ramp": _ramp_pattern,
    "window": _window_pattern,
}

_LUX_LEVELS = {
    "dark": 0.4,
    "indoor": 4.0,
    "bright": 40.0,
}


def scene_suite() -> list[SimulatedScene]:
    """The standard nine-scene suite: three patterns at three light levels."""
    scenes = []
    for lux_name, lux in _LUX_LEVELS.items():
        for pat_name, maker in _PATTERNS.items():
            scenes.append(
                SimulatedScene(
                    name=f"{lux_name}_{pat_name}",
                    irradiance=maker(),
                    lux_scale=lux,
                )
            )
    return scenes


def get_scene(name: str) -> SimulatedScene:
    for scene in scene_suite():
        if scene.name == name:
            return scene
    known = ", ".join(s.name for s in scene_suite())
    raise KeyError(f"unknown scene {name!r}; available: {known}")


def standard_sensor(rng_seed: int = 0) -> SensorModel:
    """Sensor rig used by the scene suite and the command-line tools.

    Read-noise dominated: the noise floor amplifies linearly with gain, so
    SNR declines steadily as gain rises and the floor at any gain is exactly
    the base floor times the amplification, which is also the law the gain
    synthesis completes noise against.
    """
    return SensorModel(
        x_sat=100.0,
        gamma=2.2,
        read_noise_sigma=6.0,
        shot_noise_coeff=0.0,
        rng_seed=rng_seed,
    )


# ---------------------------------------------------------------------------
# camera front-end
# ---------------------------------------------------------------------------

class SimulatedCamera:
    """Camera interface over the simulator with a per-capture counter."""

    def __init__(
        self,
        scene: SimulatedScene,
        sensor: SensorModel,
        bounds: AttributeBounds,
    ):
        self.scene = scene
        self.sensor = sensor
        self._bounds = bounds
        self.captures = 0

    def bounds(self) -> AttributeBounds:
        return self._bounds

    def capture(self, attrs: CameraAttributes) -> Image:
        if not self._bounds.contains(attrs):
            raise CaptureFailed(f"{attrs} outside camera bounds {self._bounds}")
        img = simulate_capture(self.scene, self.sensor, attrs, self.captures)
        self.captures += 1
        return img

    def with_seed(self, rng_seed: int) -> "SimulatedCamera":
        """Fresh camera on the same scene with a different noise seed."""
        return SimulatedCamera(
            self.scene, replace(self.sensor, rng_seed=rng_seed), self._bounds
        )
