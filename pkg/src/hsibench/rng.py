"""Counter-based random streams for reproducible sensor noise.

Every variate is a pure function of ``(seed, stream, site, draw)``:

* ``seed``   — the run-level noise seed,
* ``stream`` — a constant separating independent noise sources,
* ``site``   — the pixel's flat index (row-major),
* ``draw``   — the index of the variate within that site's stream.

Because no generator state is carried between sites, results are identical
regardless of evaluation order, chunking, or how many variates other sites
consumed — which is what makes the simulated sensor noise byte-reproducible.

The word function is the splitmix64 output mix applied to a combined
counter; uniforms take the top 53 bits. Gaussians come from Box-Muller,
Poisson counts from sequential inversion for small means and the PTRS
transformed-rejection sampler for large means.
"""

from __future__ import annotations

import numpy as np
from scipy.special import gammaln

_U64 = np.uint64
_GAMMA_1 = _U64(0x9E3779B97F4A7C15)
_GAMMA_2 = _U64(0xD1B54A32D192ED03)
_MIX_1 = _U64(0xBF58476D1CE4E5B9)
_MIX_2 = _U64(0x94D049BB133111EB)

#: Stream constants for the sensor noise sources.
STREAM_SHOT = 0x53484F54  # photon shot noise
STREAM_DARK = 0x4441524B  # dark/read noise

#: Mean threshold that switches the Poisson sampler from sequential
#: inversion to transformed rejection.
POISSON_SPLIT = 10.0


def _mix64(z: np.ndarray) -> np.ndarray:
    """splitmix64 finalizer, elementwise over uint64 (wrapping arithmetic)."""
    with np.errstate(over="ignore"):
        z = (z ^ (z >> _U64(30))) * _MIX_1
        z = (z ^ (z >> _U64(27))) * _MIX_2
        return z ^ (z >> _U64(31))


def _words(seed: int, stream: int, site: np.ndarray, draw: np.ndarray) -> np.ndarray:
    """Random 64-bit words for (seed, stream, site, draw) tuples."""
    key = _mix64(_U64(seed & 0xFFFFFFFFFFFFFFFF) ^ _mix64(_U64(stream & 0xFFFFFFFFFFFFFFFF)))
    with np.errstate(over="ignore"):
        inner = _mix64(key + site.astype(_U64) * _GAMMA_1)
        return _mix64(inner + draw.astype(_U64) * _GAMMA_2)


def uniforms(seed: int, stream: int, site: np.ndarray, draw) -> np.ndarray:
    """Uniform variates in [0, 1) with 53 random bits."""
    site = np.asarray(site)
    draw = np.broadcast_to(np.asarray(draw), site.shape)
    w = _words(seed, stream, site, draw)
    return (w >> _U64(11)).astype(np.float64) * (2.0 ** -53)


def normals(seed: int, stream: int, site: np.ndarray) -> np.ndarray:
    """One standard normal per site via Box-Muller (draws 0 and 1)."""
    site = np.asarray(site)
    # u1 in (0, 1] so the log is finite
    w = _words(seed, stream, site, np.broadcast_to(np.asarray(0), site.shape))
    u1 = ((w >> _U64(11)).astype(np.float64) + 1.0) * (2.0 ** -53)
    u2 = uniforms(seed, stream, site, 1)
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)


def _poisson_inversion(seed: int, stream: int, site: np.ndarray, lam: np.ndarray) -> np.ndarray:
    """Sequential-search inversion; one uniform per site. Means must be small."""
    u = uniforms(seed, stream, site, 0)
    k = np.zeros(lam.shape, dtype=np.int64)
    p = np.exp(-lam)
    cum = p.copy()
    active = u >= cum
    # With lam < POISSON_SPLIT the tail beyond a few hundred counts is far
    # below 2**-53, so the cap is unreachable in practice.
    for _ in range(512):
        if not active.any():
            break
        k[active] += 1
        p[active] *= lam[active] / k[active]
        cum[active] += p[active]
        active &= u >= cum
    return k


def _poisson_ptrs(seed: int, stream: int, site: np.ndarray, lam: np.ndarray) -> np.ndarray:
    """Transformed rejection with squeeze (PTRS); two uniforms per attempt.

    Hormann's sampler for lam >= 10: attempt t of a site consumes draws
    (2t, 2t+1), so accepted sites simply stop consuming and the result stays
    independent of which other sites are still active.
    """
    slam = np.sqrt(lam)
    loglam = np.log(lam)
    b = 0.931 + 2.53 * slam
    a = -0.059 + 0.02483 * b
    inv_alpha = 1.1239 + 1.1328 / (b - 3.4)
    v_r = 0.9277 - 3.6224 / (b - 2.0)

    out = np.zeros(lam.shape, dtype=np.int64)
    active = np.ones(lam.shape, dtype=bool)
    for attempt in range(1000):
        if not active.any():
            return out
        idx = np.nonzero(active)[0]
        u = uniforms(seed, stream, site[idx], 2 * attempt) - 0.5
        v = uniforms(seed, stream, site[idx], 2 * attempt + 1)
        us = 0.5 - np.abs(u)
        k = np.floor((2.0 * a[idx] / us + b[idx]) * u + lam[idx] + 0.43)

        accept = (us >= 0.07) & (v <= v_r[idx])
        valid = (k >= 0) & ((us >= 0.013) | (v <= us))
        with np.errstate(divide="ignore", invalid="ignore"):
            log_accept = np.log(v * inv_alpha[idx] / (a[idx] / (us * us) + b[idx])) <= (
                k * loglam[idx] - lam[idx] - gammaln(k + 1.0)
            )
        accept |= valid & log_accept

        take = idx[accept]
        out[take] = k[accept].astype(np.int64)
        active[take] = False
    raise RuntimeError("poisson rejection sampler failed to converge")


def poisson(seed: int, stream: int, site: np.ndarray, lam: np.ndarray) -> np.ndarray:
    """Poisson counts with per-site means ``lam`` (>= 0, finite)."""
    site = np.asarray(site)
    lam = np.asarray(lam, dtype=np.float64)
    if site.shape != lam.shape:
        raise ValueError("site and lam must have the same shape")
    if lam.ndim != 1:
        site = site.ravel()
        lam = lam.ravel()
    if not np.all(np.isfinite(lam)) or np.any(lam < 0):
        raise ValueError("poisson means must be finite and nonnegative")

    out = np.zeros(lam.shape, dtype=np.int64)
    small = lam < POISSON_SPLIT
    nonzero_small = small & (lam > 0)
    if nonzero_small.any():
        out[nonzero_small] = _poisson_inversion(
            seed, stream, site[nonzero_small], lam[nonzero_small]
        )
    large = ~small
    if large.any():
        out[large] = _poisson_ptrs(seed, stream, site[large], lam[large])
    return out
