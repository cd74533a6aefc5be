"""hsibench: desk-scale benchmarking toolkit for spectral reconstruction
from RGB images.

The package covers the full loop: hyperspectral cube I/O, camera simulation
(clean and degraded tracks), fidelity metrics, robustness protocols,
classical reconstruction baselines, and a batch CLI.
"""

from hsibench.core import (
    DEFAULT_BANDS,
    DEFAULT_GRID,
    DEFAULT_HEIGHT,
    DEFAULT_START_NM,
    DEFAULT_STEP_NM,
    DEFAULT_WIDTH,
    CameraResponse,
    CubeIssue,
    CubeReport,
    HsiCube,
    Rgb8Image,
    RgbImage,
    WavelengthGrid,
    crop_cube,
    scale_cube,
    validate_cube,
)

__all__ = [
    "DEFAULT_BANDS",
    "DEFAULT_GRID",
    "DEFAULT_HEIGHT",
    "DEFAULT_START_NM",
    "DEFAULT_STEP_NM",
    "DEFAULT_WIDTH",
    "CameraResponse",
    "CubeIssue",
    "CubeReport",
    "HsiCube",
    "Rgb8Image",
    "RgbImage",
    "WavelengthGrid",
    "crop_cube",
    "scale_cube",
    "validate_cube",
]

__version__ = "0.1.0"
