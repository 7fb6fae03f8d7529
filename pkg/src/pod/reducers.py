"""Surrogate reduction maps with importance-ordered coordinates.

Four constructions are provided: principal components of the predictor
covariance, sliced inverse regression (SIR), directional regression (DR)
and an SVD of a least-squares coefficient matrix (reduced-rank regression).
Each fit returns an immutable :class:`ReductionMap`; :func:`apply` turns
predictors into scores whose first columns carry the most important
directions.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .data import CenterScale, Dataset, fit_center_scale
from .numerics import NumericalError, inv_sqrt_psd, ols_solve, sample_covariance, sym_eigen

PCA = "pca"
SIR = "sir"
DR = "dr"
RRR = "rrr"
FIXED = "fixed"
KINDS = (PCA, SIR, DR, RRR)


@dataclass(frozen=True, eq=False)
class ReductionMap:
    """Projection ``scores = score_scale * (preprocess(x) - center) @ w``.

    ``center_scale`` (column standardization) is used by SIR and DR; when it
    is absent, ``center`` holds the training mean.
    """

    w: np.ndarray
    importance: np.ndarray
    kind: str
    center: np.ndarray | None = None
    center_scale: CenterScale | None = None
    score_scale: float = 1.0
    n_slices: int | None = None
    padded: bool = False
    info: dict = field(default_factory=dict)

    @property
    def p(self) -> int:
        return self.w.shape[0]

    @property
    def d_max(self) -> int:
        return self.w.shape[1]


@dataclass(frozen=True)
class ReducerSpec:
    """Which reducer to fit and how (CLI ``--reducer``, ``--slices``, ``--dmax``)."""

    kind: str = PCA
    n_slices: int | None = None
    ridge: float = 0.0
    standardize: bool = False

    def __post_init__(self):
        if self.kind not in KINDS + (FIXED,):
            raise ValueError(f"unknown reducer {self.kind!r}; choose from {', '.join(KINDS)}")
        if self.n_slices is not None and self.n_slices < 2:
            raise ValueError("need at least 2 slices")


def apply(rmap: ReductionMap, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[1] != rmap.p:
        raise ValueError(f"map expects {rmap.p} columns, got array of shape {x.shape}")
    if rmap.center_scale is not None:
        x = rmap.center_scale.apply(x)
    elif rmap.center is not None:
        x = x - rmap.center
    scores = x @ rmap.w
    if rmap.score_scale != 1.0:
        scores = scores * rmap.score_scale
    return scores


def identity_map(p: int, d_max: int | None = None) -> ReductionMap:
    """Map returning the first ``d_max`` columns unchanged (oracle representations)."""
    d_max = p if d_max is None else d_max
    return ReductionMap(np.eye(p)[:, :d_max], np.arange(d_max, 0, -1, dtype=float), FIXED)


def _check_dmax(d_max: int, upper: int, what: str):
    if not 1 <= d_max <= upper:
        raise ValueError(f"d_max={d_max} out of range [1, {upper}] ({what})")


def gram_schmidt(vectors: np.ndarray) -> np.ndarray:
    """Orthonormalize columns in order, so each prefix keeps its span."""
    out = np.array(vectors, dtype=float)
    for j in range(out.shape[1]):
        v = out[:, j]
        for _ in range(2):  # second pass restores orthogonality lost to rounding
            v = v - out[:, :j] @ (out[:, :j].T @ v)
        norm = np.linalg.norm(v)
        if norm <= 1e-12:
            raise NumericalError(f"direction {j} is linearly dependent on earlier ones")
        out[:, j] = v / norm
    return out


# ---------------------------------------------------------------------------
# PCA
# ---------------------------------------------------------------------------

def fit_pca(x, d_max: int, standardize: bool = False) -> ReductionMap:
    """Top ``d_max`` eigenvectors of the sample covariance of ``x``.

    Scores carry the p^{-1/2} factor of the usual factor-model normalization;
    learners standardize scores anyway, so it only affects raw outputs.
    """
    x = np.asarray(x, dtype=float)
    n, p = x.shape
    _check_dmax(d_max, min(p, n - 1), "pca needs d_max <= min(p, n-1)")
    cs = fit_center_scale(x, warn=False) if standardize else None
    z = cs.apply(x) if cs is not None else x
    spec = sym_eigen(sample_covariance(z))
    return ReductionMap(
        w=spec.vectors[:, :d_max].copy(),
        importance=spec.values[:d_max].copy(),
        kind=PCA,
        center=None if cs is not None else x.mean(axis=0),
        center_scale=cs,
        score_scale=p ** -0.5,
    )


# ---------------------------------------------------------------------------
# Inverse regression (SIR / DR)
# ---------------------------------------------------------------------------

def make_slices(y, n_slices: int | None = None, categorical: bool = False):
    """Row-index groups used for inverse-regression moments.

    Categorical responses slice by class. Continuous responses are sorted
    stably (ties keep row order) and cut into ``n_slices`` groups whose sizes
    differ by at most one.
    """
    y = np.asarray(y)
    if categorical:
        labels = y.astype(np.int64).ravel()
        m = int(labels.max()) + 1 if n_slices is None else n_slices
        slices = [np.flatnonzero(labels == h) for h in range(m)]
    else:
        if y.ndim == 2:
            if y.shape[1] != 1:
                raise ValueError("slicing needs a scalar continuous response")
            y = y[:, 0]
        if n_slices is None:
            n_slices = 10
        if n_slices > len(y):
            raise ValueError(f"{n_slices} slices but only {len(y)} observations")
        order = np.argsort(y, kind="stable")
        slices = np.array_split(order, n_slices)
    for h, s in enumerate(slices):
        if len(s) < 1:
            raise ValueError(f"slice {h} has no observations")
    return slices


def _whiten(x):
    cs = fit_center_scale(x, warn=False)
    z0 = cs.apply(x)
    root = inv_sqrt_psd(sample_covariance(z0))
    return cs, z0 @ root, root


def _slice_setup(x, y, d_max, n_slices, categorical):
    x = np.asarray(x, dtype=float)
    n, p = x.shape
    _check_dmax(d_max, p, "d_max must not exceed p")
    cs, z, root = _whiten(x)
    slices = make_slices(y, n_slices, categorical)
    props = np.array([len(s) / n for s in slices])
    return cs, z, root, slices, props


def _finish(kernel, root, cs, d_max, kind, n_slices):
    spec = sym_eigen(0.5 * (kernel + kernel.T))
    # eigenvectors live in the whitened space; root maps them back to the
    # column-standardized space where the returned w is orthonormal
    directions = root @ spec.vectors[:, :d_max]
    w = gram_schmidt(directions)
    return ReductionMap(
        w=w,
        importance=spec.values[:d_max].copy(),
        kind=kind,
        center_scale=cs,
        n_slices=n_slices,
        info={"kernel_eigenvalues": spec.values.copy()},
    )


def sir_kernel(z, slices, props):
    means = np.array([z[s].mean(axis=0) for s in slices])
    return (means * props[:, None]).T @ means


def dr_kernel(z, slices, props):
    p = z.shape[1]
    eye = np.eye(p)
    means = np.array([z[s].mean(axis=0) for s in slices])
    first = np.zeros((p, p))
    for s, ph in zip(slices, props):
        dev = z[s].T @ z[s] / len(s) - eye
        first += ph * dev @ dev
    mean_outer = (means * props[:, None]).T @ means
    mean_norm = float(np.sum(props * np.sum(means * means, axis=1)))
    return 2.0 * first + 2.0 * mean_outer @ mean_outer + 2.0 * mean_norm * mean_outer


def fit_sir(x, y, d_max: int, n_slices: int | None = None, categorical: bool = False) -> ReductionMap:
    """Sliced inverse regression: kernel sum_h p_h m_h m_h^T of whitened slice means."""
    cs, z, root, slices, props = _slice_setup(x, y, d_max, n_slices, categorical)
    return _finish(sir_kernel(z, slices, props), root, cs, d_max, SIR, len(slices))


def fit_dr(x, y, d_max: int, n_slices: int | None = None, categorical: bool = False) -> ReductionMap:
    """Directional regression (Li and Wang's kernel on whitened slice moments)."""
    cs, z, root, slices, props = _slice_setup(x, y, d_max, n_slices, categorical)
    return _finish(dr_kernel(z, slices, props), root, cs, d_max, DR, len(slices))


# ---------------------------------------------------------------------------
# Reduced-rank regression
# ---------------------------------------------------------------------------

def fit_rrr(x, y, d_max: int, ridge: float = 0.0) -> ReductionMap:
    """Left singular vectors of the least-squares coefficient matrix.

    When ``d_max`` exceeds ``min(p, q)`` the extra columns come from the
    leading covariance eigenvectors projected off the singular directions,
    with importance 0, and ``padded`` is set.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if y.ndim == 1:
        y = y[:, None]
    n, p = x.shape
    _check_dmax(d_max, p, "d_max must not exceed p")
    center = x.mean(axis=0)
    xc = x - center
    coef = ols_solve(xc, y - y.mean(axis=0), ridge)
    u, sv, _ = np.linalg.svd(coef, full_matrices=False)
    r = len(sv)
    if d_max <= r:
        w = u[:, :d_max]
        importance = sv[:d_max]
        padded = False
    else:
        warnings.warn(f"d_max={d_max} exceeds coefficient rank bound {r}; padding with "
                      "covariance directions", stacklevel=2)
        cols = [c for c in u.T]
        for c in sym_eigen(sample_covariance(x)).vectors.T:
            if len(cols) == d_max:
                break
            basis = np.array(cols).T
            resid = c - basis @ (basis.T @ c)
            if np.linalg.norm(resid) > 1e-8:
                cols.append(resid / np.linalg.norm(resid))
        w = gram_schmidt(np.array(cols).T)
        importance = np.concatenate([sv, np.zeros(d_max - r)])
        padded = True
    return ReductionMap(w=w.copy(), importance=importance.copy(), kind=RRR, center=center,
                        padded=padded)


def fit_reducer(spec: ReducerSpec, data: Dataset, d_max: int) -> ReductionMap:
    """Fit the reducer described by ``spec`` on ``data``."""
    if spec.kind == PCA:
        return fit_pca(data.x, d_max, standardize=spec.standardize)
    if spec.kind == FIXED:
        return identity_map(data.p, d_max)
    if spec.kind in (SIR, DR):
        fit = fit_sir if spec.kind == SIR else fit_dr
        if data.is_categorical:
            return fit(data.x, data.y, d_max, data.n_classes, categorical=True)
        if data.q != 1:
            raise ValueError(f"{spec.kind} needs a scalar or categorical response")
        return fit(data.x, data.y[:, 0], d_max, spec.n_slices or 10)
    if data.is_categorical:
        raise ValueError("rrr needs a continuous response")
    return fit_rrr(data.x, data.y, d_max, spec.ridge)
