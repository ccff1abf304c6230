"""Camera attribute points and their normalized coordinate space.

A control point is an (exposure time, gain) pair.  Optimization happens in a
unit square so that kernel length scales mean the same thing along both axes
regardless of the physical ranges involved.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import OutOfRange

__all__ = ["CameraAttributes", "AttributeBounds"]


@dataclass(frozen=True)
class CameraAttributes:
    """One camera control point: exposure time in ms and analog gain in dB."""

    exposure_ms: float
    gain_db: float

    def __post_init__(self):
        if not self.exposure_ms > 0:
            raise ValueError(f"exposure_ms must be positive, got {self.exposure_ms}")


@dataclass(frozen=True)
class AttributeBounds:
    """Inclusive box of reachable camera attributes.

    Attributes
    ----------
    t_min, t_max : float
        Exposure-time range in ms, ``0 < t_min < t_max``.
    g_min, g_max : float
        Gain range in dB, ``g_min <= g_max``.
    """

    t_min: float
    t_max: float
    g_min: float
    g_max: float

    def __post_init__(self):
        if not (0 < self.t_min < self.t_max):
            raise ValueError(f"need 0 < t_min < t_max, got [{self.t_min}, {self.t_max}]")
        if self.g_min > self.g_max:
            raise ValueError(f"need g_min <= g_max, got [{self.g_min}, {self.g_max}]")

    def contains(self, attrs: CameraAttributes, tol: float = 1e-9) -> bool:
        return (
            self.t_min - tol <= attrs.exposure_ms <= self.t_max + tol
            and self.g_min - tol <= attrs.gain_db <= self.g_max + tol
        )

    def require(self, attrs: CameraAttributes) -> None:
        if not self.contains(attrs):
            raise OutOfRange(f"{attrs} outside bounds {self}")

    # --- normalized coordinates ------------------------------------------

    def normalize(self, attrs: CameraAttributes) -> np.ndarray:
        """Map attributes onto the unit square as ``[u_exposure, u_gain]``."""
        u = (attrs.exposure_ms - self.t_min) / (self.t_max - self.t_min)
        g_span = self.g_max - self.g_min
        v = 0.0 if g_span == 0 else (attrs.gain_db - self.g_min) / g_span
        return np.array([u, v], dtype=float)

    def denormalize(self, coords) -> CameraAttributes:
        u, v = float(coords[0]), float(coords[1])
        return CameraAttributes(
            exposure_ms=self.t_min + u * (self.t_max - self.t_min),
            gain_db=self.g_min + v * (self.g_max - self.g_min),
        )

    def grid(self, n_exposure: int, n_gain: int) -> list[CameraAttributes]:
        """Evenly spaced candidate grid, exposure-major (gain varies fastest).

        The ordering is load-bearing: ties elsewhere in the pipeline break to
        the first (lowest exposure index, then lowest gain index) candidate.
        """
        if n_exposure < 1 or n_gain < 1:
            raise ValueError("grid dimensions must be >= 1")
        exposures = np.linspace(self.t_min, self.t_max, n_exposure)
        gains = np.linspace(self.g_min, self.g_max, n_gain)
        return [
            CameraAttributes(float(t), float(g)) for t in exposures for g in gains
        ]
