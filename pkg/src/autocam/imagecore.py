"""Core 8-bit grayscale image types and pixel-statistics operations.

Everything downstream (metric evaluation, response-curve fitting, synthesis)
is built on the four operations in this module: squared gradient magnitude,
windowed local entropy, non-overlapping patch statistics, and box-filter
down-sampling.  All operations are pure: identical inputs give bit-identical
outputs.

Intensity quantization is half-up throughout (x.5 rounds away from zero for
the non-negative values that occur here).
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import CorruptImage, ImageTooSmall, IoError, MissingSidecar

__all__ = [
    "Source",
    "CaptureMeta",
    "Image",
    "GradientMap",
    "gradient_magnitude_sq",
    "local_entropy",
    "patch_stats",
    "downsample",
    "round_half_up",
    "read_pgm",
    "write_pgm",
    "load_image",
    "save_image",
]

MIN_DIM = 8
ENTROPY_BINS = 16


# ---------------------------------------------------------------------------
# types
# ---------------------------------------------------------------------------

class Source(str, Enum):
    """Where an image came from."""

    REAL = "real"
    SYNTHETIC = "synthetic"
    SIMULATED = "simulated"


@dataclass(frozen=True)
class CaptureMeta:
    """Capture conditions attached to an image.

    Attributes
    ----------
    exposure_ms : float
        Exposure time in milliseconds, > 0.
    gain_db : float
        Analog gain in dB, >= 0.
    source : Source
        Provenance tag.
    lux : float or None
        Optional scene illuminance tag.
    scale : int
        Working-resolution scale relative to the sensor grid: each pixel
        covers ``scale`` x ``scale`` sensor pixels.  1 for a native capture;
        multiplied by the factor on every down-sample.
    """

    exposure_ms: float
    gain_db: float
    source: Source = Source.REAL
    lux: float | None = None
    scale: int = 1

    def __post_init__(self):
        if not self.exposure_ms > 0:
            raise ValueError(f"exposure_ms must be > 0, got {self.exposure_ms}")
        if self.gain_db < 0:
            raise ValueError(f"gain_db must be >= 0, got {self.gain_db}")
        if self.scale < 1:
            raise ValueError(f"scale must be >= 1, got {self.scale}")


@dataclass(frozen=True)
class Image:
    """8-bit grayscale image with capture metadata.

    ``pixels`` is a read-only ``uint8`` array of shape ``(height, width)``;
    both dimensions must be at least 8.
    """

    pixels: np.ndarray
    meta: CaptureMeta

    def __post_init__(self):
        px = self.pixels
        if px.ndim != 2:
            raise ValueError(f"pixels must be 2-D, got shape {px.shape}")
        if px.dtype != np.uint8:
            raise ValueError(f"pixels must be uint8, got {px.dtype}")
        if px.shape[0] < MIN_DIM or px.shape[1] < MIN_DIM:
            raise ImageTooSmall(f"image {px.shape[1]}x{px.shape[0]} below {MIN_DIM}x{MIN_DIM}")
        px.setflags(write=False)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def pixel_count(self) -> int:
        return self.pixels.size

    @property
    def mean_intensity(self) -> float:
        return float(self.pixels.mean(dtype=np.float64))


@dataclass(frozen=True)
class GradientMap:
    """Per-pixel squared gradient magnitude of a normalized image."""

    values: np.ndarray = field(repr=False)

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

def round_half_up(values: np.ndarray | float) -> np.ndarray | float:
    """Round to nearest integer with .5 rounding up (toward +inf)."""
    return np.floor(np.asarray(values, dtype=np.float64) + 0.5)


def _require_image(img: Image) -> np.ndarray:
    if not isinstance(img, Image):
        raise TypeError(f"expected Image, got {type(img).__name__}")
    return img.pixels


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------

def gradient_magnitude_sq(img: Image) -> GradientMap:
    """Per-pixel squared magnitude of the 3x3 Sobel gradient.

    Intensities are rescaled to [0, 1] before differentiation and image
    borders are handled by replicating the edge row/column, so border pixels
    carry well-defined (typically small) gradients.

    Parameters
    ----------
    img : Image
        Input image.

    Returns
    -------
    GradientMap
        ``values[i, j] = gx**2 + gy**2`` at each pixel.
    """
    px = _require_image(img)
    norm = px.astype(np.float64) / 255.0
    gx = ndimage.sobel(norm, axis=1, mode="nearest")
    gy = ndimage.sobel(norm, axis=0, mode="nearest")
    return GradientMap(values=gx * gx + gy * gy)


def local_entropy(img: Image, window: int = 5) -> np.ndarray:
    """Normalized Shannon entropy of the 16-bin histogram around each pixel.

    Parameters
    ----------
    img : Image
        Input image.
    window : int
        Odd window size in pixels, 3..15.  Borders are edge-replicated.

    Returns
    -------
    numpy.ndarray
        Float map in [0, 1]; 0 for locally constant neighborhoods, 1 when all
        16 bins are equally occupied.
    """
    px = _require_image(img)
    if window % 2 != 1 or not 3 <= window <= 15:
        raise ValueError(f"window must be odd and in [3, 15], got {window}")
    r = window // 2
    bins = (px >> 4).astype(np.int64)  # 256 levels -> 16 bins
    padded = np.pad(bins, r, mode="edge")
    h, w = px.shape
    counts = np.empty((ENTROPY_BINS, h, w), dtype=np.float64)
    # Box sums per bin via a summed-area table: O(bins * pixels), no per-pixel
    # histogram loop.
    for b in range(ENTROPY_BINS):
        ind = (padded == b).astype(np.float64)
        sat = np.zeros((ind.shape[0] + 1, ind.shape[1] + 1))
        np.cumsum(ind, axis=0, out=sat[1:, 1:])
        np.cumsum(sat[1:, 1:], axis=1, out=sat[1:, 1:])
        counts[b] = (
            sat[window:, window:]
            - sat[:-window, window:]
            - sat[window:, :-window]
            + sat[:-window, :-window]
        )
    p = counts / float(window * window)
    with np.errstate(divide="ignore", invalid="ignore"):
        plogp = np.where(p > 0, p * np.log2(p), 0.0)
    entropy = -plogp.sum(axis=0)
    return np.clip(entropy / np.log2(ENTROPY_BINS), 0.0, 1.0)


def patch_stats(img: Image, patch: int = 16) -> list[tuple[float, float]]:
    """Population mean and standard deviation per non-overlapping patch.

    Patches are ``patch`` x ``patch`` tiles anchored at the top-left corner;
    partial tiles at the right/bottom border are discarded.  Results are in
    row-major patch order.

    Raises
    ------
    ImageTooSmall
        If not a single full patch fits.
    """
    px = _require_image(img)
    if patch < 1:
        raise ValueError(f"patch must be >= 1, got {patch}")
    h, w = px.shape
    ny, nx = h // patch, w // patch
    if ny == 0 or nx == 0:
        raise ImageTooSmall(f"no {patch}x{patch} patch fits in {w}x{h}")
    trimmed = px[: ny * patch, : nx * patch].astype(np.float64)
    blocks = trimmed.reshape(ny, patch, nx, patch)
    means = blocks.mean(axis=(1, 3))
    stds = blocks.std(axis=(1, 3))  # population (ddof=0)
    return [
        (float(means[i, j]), float(stds[i, j]))
        for i in range(ny)
        for j in range(nx)
    ]


def _block_mean(values: np.ndarray, factor: int) -> np.ndarray:
    """Mean over factor x factor blocks; trailing remainder rows/cols dropped."""
    h, w = values.shape
    h2, w2 = h // factor, w // factor
    trimmed = values[: h2 * factor, : w2 * factor].astype(np.float64)
    return trimmed.reshape(h2, factor, w2, factor).mean(axis=(1, 3))


def downsample(img: Image, factor: int) -> Image:
    """Box-filter down-sample by an integer factor.

    Each output pixel is the half-up-rounded mean of a ``factor`` x ``factor``
    input block; remainder rows/columns that do not fill a block are dropped.
    Capture metadata is carried over with its ``scale`` multiplied by the
    factor.

    Raises
    ------
    ImageTooSmall
        If the result would fall below 8x8.
    """
    px = _require_image(img)
    if factor < 1:
        raise ValueError(f"factor must be >= 1, got {factor}")
    if factor == 1:
        return img
    h2, w2 = px.shape[0] // factor, px.shape[1] // factor
    if h2 < MIN_DIM or w2 < MIN_DIM:
        raise ImageTooSmall(
            f"downsample by {factor} gives {w2}x{h2}, below {MIN_DIM}x{MIN_DIM}"
        )
    means = _block_mean(px, factor)
    out = np.clip(round_half_up(means), 0, 255).astype(np.uint8)
    meta = dataclasses.replace(img.meta, scale=img.meta.scale * factor)
    return Image(pixels=out, meta=meta)


# ---------------------------------------------------------------------------
# file I/O: binary PGM plus JSON sidecar
# ---------------------------------------------------------------------------

def write_pgm(path: str | Path, pixels: np.ndarray) -> None:
    """Write a binary (P5) PGM with maxval 255."""
    path = Path(path)
    if pixels.ndim != 2 or pixels.dtype != np.uint8:
        raise ValueError("write_pgm expects a 2-D uint8 array")
    header = f"P5\n{pixels.shape[1]} {pixels.shape[0]}\n255\n".encode("ascii")
    try:
        path.write_bytes(header + pixels.tobytes())
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def read_pgm(path: str | Path) -> np.ndarray:
    """Read a binary (P5) PGM with maxval 255 into a uint8 array."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    # Header = magic, width, height, maxval as whitespace-separated tokens,
    # with '#' comments allowed; pixel data starts after the single whitespace
    # byte that terminates maxval.
    tokens: list[bytes] = []
    pos = 0
    while len(tokens) < 4:
        if pos >= len(raw):
            raise CorruptImage(f"{path}: truncated header")
        ch = raw[pos : pos + 1]
        if ch.isspace():
            pos += 1
            continue
        if ch == b"#":
            eol = raw.find(b"\n", pos)
            if eol == -1:
                raise CorruptImage(f"{path}: unterminated comment")
            pos = eol + 1
            continue
        end = pos
        while end < len(raw) and not raw[end : end + 1].isspace():
            end += 1
        tokens.append(raw[pos:end])
        pos = end
    pos += 1  # single whitespace after maxval
    if tokens[0] != b"P5":
        raise CorruptImage(f"{path}: not a binary PGM (magic {tokens[0]!r})")
    try:
        width, height, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    except ValueError as exc:
        raise CorruptImage(f"{path}: bad header numbers") from exc
    if maxval != 255:
        raise CorruptImage(f"{path}: unsupported maxval {maxval}")
    data = raw[pos : pos + width * height]
    if len(data) != width * height:
        raise CorruptImage(f"{path}: expected {width * height} pixel bytes, got {len(data)}")
    return np.frombuffer(data, dtype=np.uint8).reshape(height, width).copy()


def _sidecar_path(path: Path) -> Path:
    return path.with_suffix(".json")


def save_image(img: Image, path: str | Path) -> None:
    """Write ``<path>`` as PGM and capture metadata to ``<path basename>.json``."""
    path = Path(path)
    write_pgm(path, img.pixels)
    meta = {
        "exposure_ms": img.meta.exposure_ms,
        "gain_db": img.meta.gain_db,
        "source": img.meta.source.value,
        "scale": img.meta.scale,
    }
    if img.meta.lux is not None:
        meta["lux"] = img.meta.lux
    try:
        _sidecar_path(path).write_text(json.dumps(meta, indent=2) + "\n")
    except OSError as exc:
        raise IoError(f"cannot write sidecar for {path}: {exc}") from exc


def load_image(path: str | Path) -> Image:
    """Read a PGM and its JSON sidecar back into an :class:`Image`.

    Raises
    ------
    MissingSidecar
        If ``<path basename>.json`` does not exist.
    CorruptImage
        If either file cannot be decoded.
    """
    path = Path(path)
    pixels = read_pgm(path)
    sidecar = _sidecar_path(path)
    if not sidecar.exists():
        raise MissingSidecar(f"no sidecar {sidecar}")
    try:
        meta_raw = json.loads(sidecar.read_text())
    except OSError as exc:
        raise IoError(f"cannot read {sidecar}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise CorruptImage(f"{sidecar}: invalid JSON: {exc}") from exc
    try:
        meta = CaptureMeta(
            exposure_ms=float(meta_raw["exposure_ms"]),
            gain_db=float(meta_raw["gain_db"]),
            source=Source(meta_raw.get("source", "real")),
            lux=float(meta_raw["lux"]) if "lux" in meta_raw else None,
            scale=int(meta_raw.get("scale", 1)),
        )
    except (KeyError, ValueError) as exc:
        raise CorruptImage(f"{sidecar}: bad metadata: {exc}") from exc
    return Image(pixels=pixels, meta=meta)
