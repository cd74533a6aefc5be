"""Camera simulation: spectral projection, Bayer mosaicing, sensor noise,
demosaicing, quantization, and the composed clean / degraded pipelines.

The degraded pipeline mirrors a real capture chain: the cube is projected
through the camera sensitivity, subsampled to an RGGB mosaic, corrupted by
Poisson shot noise and Gaussian dark noise on the sensor plane, bilinearly
demosaiced, quantized to 8 bits against a white level, and finally passed
through a JPEG encode/decode round trip so consumers see real compression
artifacts. Every stage is a pure function; noise is keyed by a counter-
based stream so outputs are byte-identical regardless of chunking or
parallel schedule.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from hsibench import rng
from hsibench.core import CameraResponse, HsiCube, Rgb8Image, RgbImage
from hsibench.dataset import decode_jpeg, encode_jpeg

#: Default sensor model in normalized units: ~1000 photons at unit signal,
#: dark noise sigma 0.003.
DEFAULT_PHOTON_GAIN = 1000.0
DEFAULT_DARK_SIGMA = 0.003


@dataclass(frozen=True, eq=False)
class BayerMosaic:
    """Single-channel sensor plane under fixed RGGB tiling:
    site (0,0)=R, (0,1)=G, (1,0)=G, (1,1)=B, repeated."""

    data: NDArray[np.float64]

    pattern = "RGGB"

    def __post_init__(self) -> None:
        arr = np.array(self.data, dtype=np.float64, copy=True)
        if arr.ndim != 2:
            raise ValueError(f"expected a 2-d sensor plane, got shape {arr.shape}")
        if arr.shape[0] % 2 or arr.shape[1] % 2 or arr.shape[0] < 2 or arr.shape[1] < 2:
            raise ValueError(f"mosaic dimensions must be even and >= 2, got {arr.shape}")
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class NoiseParams:
    """Sensor noise model: shot noise as Poisson(photon_gain * x) /
    photon_gain (photon_gain = 0 disables it), plus additive Gaussian dark
    noise with standard deviation dark_sigma; the sum is clamped at zero."""

    photon_gain: float = DEFAULT_PHOTON_GAIN
    dark_sigma: float = DEFAULT_DARK_SIGMA
    seed: int = 0

    def __post_init__(self) -> None:
        if not np.isfinite(self.photon_gain) or self.photon_gain < 0:
            raise ValueError("photon_gain must be finite and >= 0")
        if not np.isfinite(self.dark_sigma) or self.dark_sigma < 0:
            raise ValueError("dark_sigma must be finite and >= 0")


def project_clean(cube: HsiCube, css: CameraResponse) -> RgbImage:
    """Project each spectrum through the sensitivity matrix (linear, no
    quantization): rgb[h, w, c] = sum_b matrix[c, b] * cube[b, h, w]."""
    if cube.grid != css.grid:
        raise ValueError(
            f"cube grid {cube.grid} does not match sensitivity grid {css.grid}"
        )
    planes = np.tensordot(css.matrix, cube.data, axes=([1], [0]))
    return RgbImage(np.moveaxis(planes, 0, -1))


def simulate_clean(
    cube: HsiCube, css: CameraResponse, white_level: float | None = None
) -> RgbImage:
    """Clean-track observation: exactly the unquantized projection.

    ``white_level`` is accepted for call-site symmetry with the degraded
    track (run metadata records it) but cannot affect the output — the
    clean track is stored losslessly without quantization.
    """
    return project_clean(cube, css)


def mosaic_rggb(rgb: RgbImage) -> BayerMosaic:
    """Subsample an RGB image to the RGGB sensor plane; off-pattern
    channels are discarded."""
    if rgb.height % 2 or rgb.width % 2:
        raise ValueError(
            f"mosaic requires even dimensions, got {rgb.height}x{rgb.width}"
        )
    d = rgb.data
    out = np.empty((rgb.height, rgb.width), dtype=np.float64)
    out[0::2, 0::2] = d[0::2, 0::2, 0]
    out[0::2, 1::2] = d[0::2, 1::2, 1]
    out[1::2, 0::2] = d[1::2, 0::2, 1]
    out[1::2, 1::2] = d[1::2, 1::2, 2]
    return BayerMosaic(out)


def add_sensor_noise(m: BayerMosaic, p: NoiseParams) -> BayerMosaic:
    """Apply shot and dark noise per sensor site, clamped at zero.

    Each site's variates depend only on (seed, source, site index), never on
    evaluation order.
    """
    if np.any(m.data < 0):
        raise ValueError("sensor samples must be nonnegative before noise")
    flat = m.data.ravel()
    sites = np.arange(flat.size, dtype=np.uint64)
    if p.photon_gain > 0:
        counts = rng.poisson(p.seed, rng.STREAM_SHOT, sites, p.photon_gain * flat)
        noisy = counts.astype(np.float64) / p.photon_gain
    else:
        noisy = flat.copy()
    if p.dark_sigma > 0:
        noisy = noisy + p.dark_sigma * rng.normals(p.seed, rng.STREAM_DARK, sites)
    return BayerMosaic(np.clip(noisy, 0.0, None).reshape(m.data.shape))


# Bilinear interpolation kernels over the 3x3 neighborhood, divided by 4.
# For every site/channel combination the weights over available same-channel
# neighbors sum to 4, so constants are reproduced exactly.
_KERNEL_RB = np.array([[1.0, 2.0, 1.0], [2.0, 4.0, 2.0], [1.0, 2.0, 1.0]])
_KERNEL_G = np.array([[0.0, 1.0, 0.0], [1.0, 4.0, 1.0], [0.0, 1.0, 0.0]])


def _conv3(padded: NDArray[np.float64], kernel: NDArray[np.float64]) -> NDArray[np.float64]:
    h, w = padded.shape[0] - 2, padded.shape[1] - 2
    out = np.zeros((h, w), dtype=np.float64)
    for dy in range(3):
        for dx in range(3):
            weight = kernel[dy, dx]
            if weight:
                out += weight * padded[dy : dy + h, dx : dx + w]
    return out


def demosaic_bilinear(m: BayerMosaic) -> RgbImage:
    """Fill missing channels by bilinear averaging of the nearest
    same-channel neighbors; borders are handled by reflection.

    Reflection maps index -1 to +1 (and H to H-2), which preserves CFA
    parity, so the padded plane stays a valid RGGB mosaic.
    """
    h, w = m.height, m.width
    padded = np.pad(m.data, 1, mode="reflect")
    row_par = (np.arange(-1, h + 1) % 2)[:, None]
    col_par = (np.arange(-1, w + 1) % 2)[None, :]
    mask_r = (row_par == 0) & (col_par == 0)
    mask_g = (row_par + col_par) == 1
    mask_b = (row_par == 1) & (col_par == 1)
    out = np.empty((h, w, 3), dtype=np.float64)
    out[:, :, 0] = _conv3(padded * mask_r, _KERNEL_RB) / 4.0
    out[:, :, 1] = _conv3(padded * mask_g, _KERNEL_G) / 4.0
    out[:, :, 2] = _conv3(padded * mask_b, _KERNEL_RB) / 4.0
    return RgbImage(out)


def quantize(rgb: RgbImage, white_level: float) -> Rgb8Image:
    """Map linear radiance to 8-bit codes: round(255 * clamp(x / white_level,
    0, 1)), rounding half up (white_level/2 -> 128)."""
    if not np.isfinite(white_level) or white_level <= 0:
        raise ValueError(f"white_level must be finite and positive, got {white_level}")
    scaled = np.clip(rgb.data / float(white_level), 0.0, 1.0)
    codes = np.floor(255.0 * scaled + 0.5).astype(np.uint8)
    return Rgb8Image(codes, float(white_level))


def real_world_jpeg(
    cube: HsiCube,
    css: CameraResponse,
    p: NoiseParams,
    white_level: float,
    quality: int = 95,
    subsampling: str = "4:2:0",
) -> bytes:
    """Degraded-track observation as encoded JPEG bytes (the artifact a
    run writes to disk). Deterministic given inputs and seed."""
    rgb = project_clean(cube, css)
    noisy = add_sensor_noise(mosaic_rggb(rgb), p)
    img8 = quantize(demosaic_bilinear(noisy), white_level)
    return encode_jpeg(img8, quality=quality, subsampling=subsampling)


def simulate_real_world(
    cube: HsiCube,
    css: CameraResponse,
    p: NoiseParams,
    quality: int,
    white_level: float,
    subsampling: str = "4:2:0",
) -> Rgb8Image:
    """Full degraded pipeline: projection, RGGB mosaic, sensor noise,
    bilinear demosaic, quantization, JPEG encode + decode. Returns the
    decoded image so downstream consumers see compression artifacts."""
    blob = real_world_jpeg(cube, css, p, white_level, quality, subsampling)
    return decode_jpeg(blob, white_level=white_level)


def percentile_white_level(images: list[RgbImage], pct: float = 99.9) -> float:
    """Exposure normalization for a run: the given percentile of the linear
    clean RGB over all supplied images (default 99.9)."""
    if not images:
        raise ValueError("need at least one image to derive a white level")
    samples = np.concatenate([img.data.ravel() for img in images])
    level = float(np.percentile(samples, pct))
    if level <= 0:
        raise ValueError("derived white level is not positive; check input images")
    return level
