"""Core value types for the benchmark: spectral grids, cubes, RGB images,
and camera spectral sensitivities.

Conventions
-----------
* Cube samples are stored as float64 with shape ``(bands, height, width)``;
  ``data.ravel()`` therefore yields band-sequential, row-major order.
* Float RGB images are float64 ``(height, width, 3)`` in linear radiance
  units; 8-bit images are uint8 ``(height, width, 3)`` plus the white level
  used during quantization.
* All array payloads are frozen (``writeable=False``) on construction; the
  constructors always copy their input.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray

# Default scene geometry of the benchmark corpus. Exposed for convenience,
# never enforced: every operation works on arbitrary sizes.
DEFAULT_HEIGHT = 482
DEFAULT_WIDTH = 512

DEFAULT_START_NM = 400.0
DEFAULT_STEP_NM = 10.0
DEFAULT_BANDS = 31


@dataclass(frozen=True)
class WavelengthGrid:
    """Uniform spectral sampling grid: ``start_nm + step_nm * [0..bands)``."""

    start_nm: float = DEFAULT_START_NM
    step_nm: float = DEFAULT_STEP_NM
    bands: int = DEFAULT_BANDS

    def __post_init__(self) -> None:
        if not np.isfinite(self.start_nm):
            raise ValueError("start_nm must be finite")
        if not np.isfinite(self.step_nm) or self.step_nm <= 0:
            raise ValueError("step_nm must be finite and positive")
        if self.bands < 1:
            raise ValueError("bands must be >= 1")

    def wavelengths(self) -> NDArray[np.float64]:
        """Band-center wavelengths in nm, ascending."""
        return self.start_nm + self.step_nm * np.arange(self.bands, dtype=np.float64)


#: The grid used by the benchmark corpus: 400-700 nm in 10 nm steps.
DEFAULT_GRID = WavelengthGrid()


def _frozen_f64(values: NDArray, shape_hint: str, ndim: int) -> NDArray[np.float64]:
    arr = np.array(values, dtype=np.float64, copy=True)
    if arr.ndim != ndim:
        raise ValueError(f"expected a {ndim}-d array {shape_hint}, got shape {arr.shape}")
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class HsiCube:
    """A hyperspectral radiance cube on a wavelength grid.

    ``data`` has shape ``(grid.bands, height, width)``. Non-finite or
    negative samples are representable (intermediate estimates may contain
    them); use :func:`validate_cube` to check the radiance invariants.
    """

    data: NDArray[np.float64]
    grid: WavelengthGrid = DEFAULT_GRID

    def __post_init__(self) -> None:
        arr = _frozen_f64(self.data, "(bands, height, width)", 3)
        if arr.shape[0] != self.grid.bands:
            raise ValueError(
                f"cube has {arr.shape[0]} band planes but the grid declares {self.grid.bands}"
            )
        if arr.shape[1] < 1 or arr.shape[2] < 1:
            raise ValueError("cube height and width must be >= 1")
        object.__setattr__(self, "data", arr)

    @property
    def bands(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    def pixels(self) -> NDArray[np.float64]:
        """Spectra as a ``(height * width, bands)`` array, pixels row-major."""
        return self.data.reshape(self.bands, -1).T

    @classmethod
    def from_pixels(
        cls,
        pixels: NDArray,
        height: int,
        width: int,
        grid: WavelengthGrid = DEFAULT_GRID,
    ) -> "HsiCube":
        """Inverse of :meth:`pixels`: build a cube from row-major spectra."""
        arr = np.asarray(pixels, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[0] != height * width:
            raise ValueError(
                f"expected ({height * width}, bands) spectra, got shape {arr.shape}"
            )
        return cls(arr.T.reshape(arr.shape[1], height, width), grid)


@dataclass(frozen=True, eq=False)
class RgbImage:
    """Linear-radiance RGB image, float64 ``(height, width, 3)``."""

    data: NDArray[np.float64]

    def __post_init__(self) -> None:
        arr = _frozen_f64(self.data, "(height, width, 3)", 3)
        if arr.shape[2] != 3:
            raise ValueError(f"expected 3 channels, got {arr.shape[2]}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError("image height and width must be >= 1")
        object.__setattr__(self, "data", arr)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    def pixels(self) -> NDArray[np.float64]:
        """``(height * width, 3)`` view, pixels row-major."""
        return self.data.reshape(-1, 3)


@dataclass(frozen=True, eq=False)
class Rgb8Image:
    """Quantized 8-bit RGB image plus the white level that maps code 255
    back to linear radiance (linear = code / 255 * white_level)."""

    data: NDArray[np.uint8]
    white_level: float = 1.0

    def __post_init__(self) -> None:
        arr = np.array(self.data, copy=True)
        if arr.dtype != np.uint8:
            raise ValueError(f"expected uint8 samples, got {arr.dtype}")
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise ValueError(f"expected (height, width, 3) uint8, got shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError("image height and width must be >= 1")
        if not np.isfinite(self.white_level) or self.white_level <= 0:
            raise ValueError("white_level must be finite and positive")
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    def to_linear(self) -> RgbImage:
        """Map codes back to linear radiance: ``code / 255 * white_level``."""
        return RgbImage(self.data.astype(np.float64) / 255.0 * self.white_level)


@dataclass(frozen=True, eq=False)
class CameraResponse:
    """Camera spectral sensitivity: a ``(3, bands)`` matrix of nonnegative
    finite weights (rows R, G, B) on a wavelength grid. The matrix must have
    rank 3, otherwise the RGB channels would be linearly dependent and the
    pseudoinverse estimator undefined."""

    matrix: NDArray[np.float64]
    grid: WavelengthGrid = DEFAULT_GRID

    def __post_init__(self) -> None:
        arr = _frozen_f64(self.matrix, "(3, bands)", 2)
        if arr.shape[0] != 3:
            raise ValueError(f"expected 3 sensitivity rows, got {arr.shape[0]}")
        if arr.shape[1] != self.grid.bands:
            raise ValueError(
                f"matrix has {arr.shape[1]} bands but the grid declares {self.grid.bands}"
            )
        if not np.all(np.isfinite(arr)):
            raise ValueError("sensitivity matrix must be finite")
        if np.any(arr < 0):
            raise ValueError("sensitivity matrix must be nonnegative")
        if np.linalg.matrix_rank(arr) != 3:
            raise ValueError("sensitivity matrix must have rank 3 (independent channels)")
        object.__setattr__(self, "matrix", arr)


@dataclass(frozen=True)
class CubeIssue:
    """One invariant violation inside a cube: ``kind`` is one of
    ``"nan"``, ``"inf"``, ``"negative"``."""

    kind: str
    row: int
    col: int
    band: int


@dataclass(frozen=True)
class CubeReport:
    """Outcome of :func:`validate_cube`; empty ``issues`` means the cube
    holds the radiance invariants (finite, nonnegative)."""

    issues: tuple[CubeIssue, ...] = field(default=())

    @property
    def ok(self) -> bool:
        return not self.issues


def scale_cube(cube: HsiCube, factor: float) -> HsiCube:
    """Multiply every sample by ``factor`` (> 0, finite)."""
    if not np.isfinite(factor) or factor <= 0:
        raise ValueError(f"scale factor must be finite and positive, got {factor}")
    return HsiCube(cube.data * float(factor), cube.grid)


def crop_cube(cube: HsiCube, top: int, left: int, height: int, width: int) -> HsiCube:
    """Spatial crop; the rectangle must lie fully inside the cube."""
    if height < 1 or width < 1:
        raise ValueError("crop height and width must be >= 1")
    if top < 0 or left < 0 or top + height > cube.height or left + width > cube.width:
        raise IndexError(
            f"crop rectangle (top={top}, left={left}, h={height}, w={width}) exceeds "
            f"cube extent {cube.height}x{cube.width}"
        )
    return HsiCube(cube.data[:, top : top + height, left : left + width], cube.grid)


def validate_cube(cube: HsiCube) -> CubeReport:
    """Report every NaN, Inf, or negative sample with its coordinates."""
    data = cube.data
    issues: list[CubeIssue] = []
    for kind, mask in (
        ("nan", np.isnan(data)),
        ("inf", np.isinf(data)),
        ("negative", data < 0),
    ):
        for band, row, col in np.argwhere(mask):
            issues.append(CubeIssue(kind, int(row), int(col), int(band)))
    issues.sort(key=lambda i: (i.row, i.col, i.band, i.kind))
    return CubeReport(tuple(issues))
