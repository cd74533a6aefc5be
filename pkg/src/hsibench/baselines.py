"""Classical spectral reconstructors.

Three pixelwise estimators, in increasing order of learned structure:

* :func:`pseudoinverse_estimate` — the closed-form minimum-norm spectrum
  consistent with the camera sensitivity (no training data);
* :func:`fit_linear` / :func:`predict_linear` — ridge regression from RGB
  features (optionally quadratic) to spectra;
* :func:`fit_basis` / :func:`predict_basis` — a small learned basis plus a
  pixelwise weight predictor, fit by alternating least squares, optionally
  under a sensitivity-prior objective that penalizes the back-projected
  RGB residual.

All fits are deterministic (fixed solvers, fixed initialization) and all
predictors are pixelwise, hence they commute with pixel permutations; the
order-1 linear family is positively homogeneous in its input. Models
serialize to a little-endian binary container that round-trips bit-exactly.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.typing import NDArray
from scipy.linalg import cho_factor, cho_solve

from hsibench.core import CameraResponse, HsiCube, RgbImage, WavelengthGrid
from hsibench.dataset import FormatError

FEATURE_COUNTS = {1: 3, 2: 9}

MODEL_MAGIC = b"SBMD"
MODEL_VERSION = 1
_KIND_LINEAR = 1
_KIND_BASIS = 2
_MODEL_HEADER = struct.Struct("<4sHBBddHd")  # magic, version, kind, order, grid, lambda


def rgb_features(pixels: NDArray[np.float64], order: int) -> NDArray[np.float64]:
    """Per-pixel regression features: order 1 is (r, g, b); order 2 appends
    the squares and pairwise products (r2, g2, b2, rg, rb, gb)."""
    if order not in FEATURE_COUNTS:
        raise ValueError(f"feature_order must be 1 or 2, got {order}")
    pixels = np.asarray(pixels, dtype=np.float64)
    if pixels.ndim != 2 or pixels.shape[1] != 3:
        raise ValueError(f"expected (pixels, 3) rgb values, got shape {pixels.shape}")
    if order == 1:
        return pixels
    r, g, b = pixels[:, 0], pixels[:, 1], pixels[:, 2]
    return np.column_stack([r, g, b, r * r, g * g, b * b, r * g, r * b, g * b])


@dataclass(frozen=True, eq=False)
class LinearModel:
    """Ridge-regression reconstructor: spectrum = weights @ features(rgb)."""

    weights: NDArray[np.float64]  # (bands, features)
    feature_order: int
    ridge_lambda: float
    grid: WavelengthGrid

    def __post_init__(self) -> None:
        arr = np.array(self.weights, dtype=np.float64, copy=True)
        if self.feature_order not in FEATURE_COUNTS:
            raise ValueError(f"feature_order must be 1 or 2, got {self.feature_order}")
        want = (self.grid.bands, FEATURE_COUNTS[self.feature_order])
        if arr.shape != want:
            raise ValueError(f"weights must have shape {want}, got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("weights must be finite")
        if self.ridge_lambda < 0:
            raise ValueError("ridge_lambda must be >= 0")
        arr.flags.writeable = False
        object.__setattr__(self, "weights", arr)


@dataclass(frozen=True, eq=False)
class BasisModel:
    """Basis-expansion reconstructor: per pixel, predicted weights
    weight_map @ features(rgb) combine the basis rows into a spectrum."""

    basis: NDArray[np.float64]  # (k, bands), rows linearly independent
    weight_map: NDArray[np.float64]  # (k, features)
    feature_order: int
    ridge_lambda: float
    grid: WavelengthGrid
    objective_trace: tuple[float, ...] = field(default=())

    def __post_init__(self) -> None:
        basis = np.array(self.basis, dtype=np.float64, copy=True)
        wmap = np.array(self.weight_map, dtype=np.float64, copy=True)
        if self.feature_order not in FEATURE_COUNTS:
            raise ValueError(f"feature_order must be 1 or 2, got {self.feature_order}")
        if basis.ndim != 2 or basis.shape[1] != self.grid.bands:
            raise ValueError(
                f"basis must be (k, {self.grid.bands}), got {basis.shape}"
            )
        k = basis.shape[0]
        if not 1 <= k <= self.grid.bands:
            raise ValueError(f"basis count {k} must be in [1, bands={self.grid.bands}]")
        if wmap.shape != (k, FEATURE_COUNTS[self.feature_order]):
            raise ValueError(
                f"weight_map must be ({k}, {FEATURE_COUNTS[self.feature_order]}), "
                f"got {wmap.shape}"
            )
        if not (np.all(np.isfinite(basis)) and np.all(np.isfinite(wmap))):
            raise ValueError("basis and weight_map must be finite")
        if np.linalg.matrix_rank(basis) != k:
            raise ValueError("basis rows must be linearly independent")
        basis.flags.writeable = False
        wmap.flags.writeable = False
        object.__setattr__(self, "basis", basis)
        object.__setattr__(self, "weight_map", wmap)
        object.__setattr__(self, "objective_trace", tuple(float(v) for v in self.objective_trace))

    @property
    def k(self) -> int:
        return self.basis.shape[0]


def pseudoinverse_estimate(css: CameraResponse, rgb: RgbImage) -> HsiCube:
    """Per pixel, the minimum-norm spectrum s with matrix @ s = rgb
    (Moore-Penrose). Negative entries are kept — clamping would break the
    exact re-projection property; apply :func:`clamp_nonnegative` if a
    physical spectrum is required."""
    pinv = np.linalg.pinv(css.matrix)  # (bands, 3)
    spectra = rgb.pixels() @ pinv.T
    return HsiCube.from_pixels(spectra, rgb.height, rgb.width, css.grid)


def clamp_nonnegative(cube: HsiCube) -> HsiCube:
    """Zero out negative samples (for consumers needing physical spectra)."""
    return HsiCube(np.clip(cube.data, 0.0, None), cube.grid)


def _stack_pairs(
    pairs: list[tuple[RgbImage, HsiCube]], order: int
) -> tuple[NDArray, NDArray, WavelengthGrid]:
    if not pairs:
        raise ValueError("training set is empty; need at least one (rgb, cube) pair")
    grid = pairs[0][1].grid
    xs, ys = [], []
    for i, (rgb, cube) in enumerate(pairs):
        if (rgb.height, rgb.width) != (cube.height, cube.width):
            raise ValueError(
                f"pair {i}: rgb {rgb.height}x{rgb.width} does not match "
                f"cube {cube.height}x{cube.width}"
            )
        if cube.grid != grid:
            raise ValueError(f"pair {i}: cube grid differs from pair 0")
        xs.append(rgb_features(rgb.pixels(), order))
        ys.append(cube.pixels())
    return np.vstack(xs), np.vstack(ys), grid


def _solve_normal(gram: NDArray, rhs: NDArray) -> NDArray:
    """Solve the SPD normal equations; a singular system raises with a
    pointer at the regularization knob."""
    try:
        return cho_solve(cho_factor(gram), rhs)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(
            f"normal matrix is singular ({exc}); use ridge_lambda > 0"
        ) from None


def fit_linear(
    pairs: list[tuple[RgbImage, HsiCube]],
    feature_order: int = 1,
    ridge_lambda: float = 1e-8,
) -> LinearModel:
    """Ridge least squares over all training pixels: minimize
    sum ||W f(rgb) - spectrum||^2 + lambda ||W||^2 via the normal equations."""
    if ridge_lambda < 0:
        raise ValueError("ridge_lambda must be >= 0")
    x, y, grid = _stack_pairs(pairs, feature_order)
    gram = x.T @ x + ridge_lambda * np.eye(x.shape[1])
    weights = _solve_normal(gram, x.T @ y).T  # (bands, features)
    return LinearModel(weights, feature_order, ridge_lambda, grid)


def predict_linear(model: LinearModel, rgb: RgbImage) -> HsiCube:
    """Pixelwise W @ f(rgb); no spatial context, so the prediction commutes
    with any pixel permutation of the input."""
    feats = rgb_features(rgb.pixels(), model.feature_order)
    return HsiCube.from_pixels(feats @ model.weights.T, rgb.height, rgb.width, model.grid)


# --------------------------------------------------------------------------
# basis-expansion model (alternating least squares)


def _weight_step(
    x: NDArray, w_star: NDArray, metric: NDArray | None, lam: float
) -> NDArray:
    """Exact minimizer of sum_i ||W x_i - w*_i||^2_G + lam ||W||_F^2.

    G = metric (k x k SPD; None means identity). Solved per eigencomponent
    of G: with G = U diag(d) U^T the stationarity condition
    X^T X V G + lam V = X^T W* G decouples into ridge solves."""
    if metric is None:
        gram = x.T @ x + lam * np.eye(x.shape[1])
        return _solve_normal(gram, x.T @ w_star).T
    d, u = np.linalg.eigh(metric)
    rhs = x.T @ (w_star @ u)  # (F, k)
    xtx = x.T @ x
    eye = np.eye(x.shape[1])
    v = np.empty_like(rhs)
    for j in range(d.size):
        v[:, j] = _solve_normal(xtx + (lam / d[j]) * eye, rhs[:, j])
    return (v @ u.T).T  # W (k, F)


def _data_objective(
    s: NDArray, x: NDArray, basis: NDArray, w_map: NDArray, metric: NDArray | None
) -> float:
    resid = (x @ w_map.T) @ basis - s
    if metric is None:
        return float(np.sum(resid * resid) / s.shape[0])
    return float(np.sum(resid * (resid @ metric)) / s.shape[0])


def fit_basis(
    pairs: list[tuple[RgbImage, HsiCube]],
    k: int,
    ridge_lambda: float = 1e-8,
    iterations: int = 10,
    objective: str = "plain",
    css: CameraResponse | None = None,
    tau: float = 10.0,
    feature_order: int = 1,
) -> BasisModel:
    """Alternating least squares for the basis-expansion model.

    Schedule: (a) initialize the basis with the top-k right singular
    vectors of the training spectra (uncentered — the model has no offset
    term); (b) fix the basis and ridge-fit the weight map onto the optimal
    per-pixel weights; (c) fix the weight map and refit the basis by least
    squares, re-orthonormalizing and folding the triangular factor into the
    weight map (predictions unchanged). Step (c) runs between weight fits,
    so ``iterations=1`` is exactly PCA + one ridge fit. The recorded
    objective trace (mean per-pixel data term, sensitivity-weighted under
    ``css_prior``) is non-increasing by construction: any half-step that
    would raise it is reverted.

    ``objective="css_prior"`` penalizes the back-projection residual
    through ``css`` with weight ``tau`` — fitting under the combined
    relative + tau * back-projection philosophy in least-squares form.
    """
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    if objective not in ("plain", "css_prior"):
        raise ValueError(f"objective must be 'plain' or 'css_prior', got {objective!r}")
    if objective == "css_prior":
        if css is None:
            raise ValueError("objective 'css_prior' requires a CameraResponse")
        if tau < 0:
            raise ValueError("tau must be >= 0")
    if ridge_lambda < 0:
        raise ValueError("ridge_lambda must be >= 0")
    x, s, grid = _stack_pairs(pairs, feature_order)
    if not 1 <= k <= grid.bands:
        raise ValueError(f"basis count {k} must be in [1, bands={grid.bands}]")
    if objective == "css_prior" and css.grid != grid:
        raise ValueError("css grid does not match training cubes")

    metric = None
    if objective == "css_prior":
        phi = css.matrix
        metric = np.eye(grid.bands) + tau * (phi.T @ phi)

    _, _, vt = np.linalg.svd(s, full_matrices=False)
    if vt.shape[0] < k:
        raise ValueError(
            f"need at least {k} training pixels for a {k}-function basis"
        )
    basis = vt[:k].copy()  # orthonormal rows

    def weight_fit(b: NDArray) -> NDArray:
        if metric is None:
            # (B B^T) = I for orthonormal rows, so optimal weights are B s
            return _weight_step(x, s @ b.T, None, ridge_lambda)
        a = b @ metric @ b.T  # k x k SPD: the metric seen by the weights
        w_star = np.linalg.solve(a, (s @ metric @ b.T).T).T
        return _weight_step(x, w_star, a, ridge_lambda)

    w_map = weight_fit(basis)
    trace = [_data_objective(s, x, basis, w_map, metric)]

    for _ in range(iterations - 1):
        # (c) basis refit at fixed weights, then re-orthonormalize
        p = x @ w_map.T
        b_raw = np.linalg.lstsq(p, s, rcond=None)[0]  # (k, bands)
        q, r = np.linalg.qr(b_raw.T)  # b_raw = r.T @ q.T
        cand_basis, cand_wmap = np.ascontiguousarray(q.T), r @ w_map
        j_c = _data_objective(s, x, cand_basis, cand_wmap, metric)
        if j_c <= trace[-1]:
            basis, w_map = cand_basis, cand_wmap
            trace.append(j_c)
        else:
            trace.append(trace[-1])
        # (b) weight refit at fixed basis
        cand_wmap = weight_fit(basis)
        j_b = _data_objective(s, x, basis, cand_wmap, metric)
        if j_b <= trace[-1]:
            w_map = cand_wmap
            trace.append(j_b)
        else:
            trace.append(trace[-1])

    return BasisModel(basis, w_map, feature_order, ridge_lambda, grid, tuple(trace))


def predict_basis(model: BasisModel, rgb: RgbImage) -> HsiCube:
    """Pixelwise basis^T @ (weight_map @ f(rgb))."""
    feats = rgb_features(rgb.pixels(), model.feature_order)
    spectra = (feats @ model.weight_map.T) @ model.basis
    return HsiCube.from_pixels(spectra, rgb.height, rgb.width, model.grid)


# --------------------------------------------------------------------------
# model serialization


def model_to_bytes(model: LinearModel | BasisModel) -> bytes:
    if isinstance(model, LinearModel):
        kind, extra = _KIND_LINEAR, b""
        payload = np.ascontiguousarray(model.weights, dtype="<f8").tobytes()
    elif isinstance(model, BasisModel):
        kind = _KIND_BASIS
        extra = struct.pack("<HH", model.k, len(model.objective_trace))
        payload = (
            np.ascontiguousarray(model.basis, dtype="<f8").tobytes()
            + np.ascontiguousarray(model.weight_map, dtype="<f8").tobytes()
            + np.asarray(model.objective_trace, dtype="<f8").tobytes()
        )
    else:
        raise TypeError(f"cannot serialize a {type(model).__name__}")
    head = _MODEL_HEADER.pack(
        MODEL_MAGIC,
        MODEL_VERSION,
        kind,
        model.feature_order,
        model.grid.start_nm,
        model.grid.step_nm,
        model.grid.bands,
        model.ridge_lambda,
    )
    return head + extra + payload


def model_from_bytes(blob: bytes) -> LinearModel | BasisModel:
    if len(blob) < _MODEL_HEADER.size:
        raise FormatError("truncated model header")
    magic, version, kind, order, start, step, bands, lam = _MODEL_HEADER.unpack_from(blob)
    if magic != MODEL_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MODEL_MAGIC!r}")
    if version != MODEL_VERSION:
        raise FormatError(f"unsupported version {version}, expected {MODEL_VERSION}")
    if order not in FEATURE_COUNTS:
        raise FormatError(f"invalid feature_order {order}")
    grid = WavelengthGrid(start, step, bands)
    n_feat = FEATURE_COUNTS[order]
    off = _MODEL_HEADER.size

    def take(count):
        nonlocal off
        end = off + 8 * count
        if len(blob) < end:
            raise FormatError("truncated model payload")
        out = np.frombuffer(blob, dtype="<f8", count=count, offset=off)
        off = end
        return out

    if kind == _KIND_LINEAR:
        weights = take(bands * n_feat).reshape(bands, n_feat)
        model = LinearModel(weights, order, lam, grid)
    elif kind == _KIND_BASIS:
        if len(blob) < off + 4:
            raise FormatError("truncated model payload")
        k, n_trace = struct.unpack_from("<HH", blob, off)
        off += 4
        basis = take(k * bands).reshape(k, bands)
        wmap = take(k * n_feat).reshape(k, n_feat)
        trace = tuple(take(n_trace).tolist())
        model = BasisModel(basis, wmap, order, lam, grid, trace)
    else:
        raise FormatError(f"unknown model kind {kind}")
    if off != len(blob):
        raise FormatError(f"{len(blob) - off} unexpected trailing bytes")
    return model


def save_model(model: LinearModel | BasisModel, path: str | Path) -> None:
    Path(path).write_bytes(model_to_bytes(model))


def load_model(path: str | Path) -> LinearModel | BasisModel:
    try:
        return model_from_bytes(Path(path).read_bytes())
    except FormatError as exc:
        raise FormatError(f"{path}: {exc}") from None
