"""Built-in defaults: a synthetic trichromatic camera and noise parameters.

The real camera used to produce the degraded track is proprietary, so the
toolkit ships a smooth, plausible stand-in: three Gaussian sensitivity lobes
peaking in the long (R), middle (G), and short (B) wavelengths. Everything
here is configurable; these values carry no calibration claim.
"""

from __future__ import annotations

import numpy as np

from hsibench.camera import NoiseParams
from hsibench.core import DEFAULT_GRID, CameraResponse, WavelengthGrid

#: Gaussian lobe parameters per channel: (peak nm, width nm, amplitude).
DEFAULT_CSS_LOBES = (
    (600.0, 45.0, 0.90),  # R
    (540.0, 42.0, 1.05),  # G
    (460.0, 38.0, 1.00),  # B
)

#: Default sensor noise: ~1000 photons at unit radiance, 0.3% dark noise.
DEFAULT_NOISE = NoiseParams(photon_gain=1000.0, dark_sigma=0.003, seed=0)


def default_css(grid: WavelengthGrid = DEFAULT_GRID) -> CameraResponse:
    """Synthetic camera sensitivities: one Gaussian lobe per channel evaluated
    on the grid. Strictly positive everywhere, so the matrix has rank 3 on any
    grid with at least 3 bands."""
    if grid.bands < 3:
        raise ValueError(f"default css needs >= 3 bands, got {grid.bands}")
    wavelengths = grid.wavelengths()
    rows = [
        amp * np.exp(-0.5 * ((wavelengths - peak) / width) ** 2)
        for peak, width, amp in DEFAULT_CSS_LOBES
    ]
    return CameraResponse(np.vstack(rows), grid)
