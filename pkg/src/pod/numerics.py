"""Dense linear algebra used by the reducers and baselines."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special


class NumericalError(ArithmeticError):
    """A numerical routine failed (non-convergence, singular system)."""


class SingularSystemError(NumericalError):
    """Normal equations are singular; retry with ``ridge > 0``."""


@dataclass(frozen=True, eq=False)
class Spectrum:
    """Eigenvalues in descending order; ``vectors[:, j]`` pairs with ``values[j]``."""

    values: np.ndarray
    vectors: np.ndarray

    def top(self, k: int) -> "Spectrum":
        return Spectrum(self.values[:k], self.vectors[:, :k])


def sample_covariance(x) -> np.ndarray:
    """Covariance with the 1/n convention."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValueError("sample_covariance needs a 2-d array with at least 2 rows")
    xc = x - x.mean(axis=0)
    s = xc.T @ xc / x.shape[0]
    return 0.5 * (s + s.T)


def _fix_signs(vectors: np.ndarray) -> np.ndarray:
    # largest-magnitude entry positive; argmax returns the lowest index on ties
    idx = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[idx, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    return vectors * signs


def _check_symmetric(s: np.ndarray, tol: float) -> None:
    if s.ndim != 2 or s.shape[0] != s.shape[1] or s.shape[0] < 1:
        raise ValueError(f"expected a non-empty square matrix, got shape {s.shape}")
    if not np.all(np.isfinite(s)):
        raise ValueError("matrix has non-finite entries")
    asym = np.max(np.abs(s - s.T)) if s.size else 0.0
    if asym > tol * max(1.0, np.max(np.abs(s))):
        raise ValueError(f"matrix is not symmetric (max asymmetry {asym:.3g})")


def _round_robin(m: int):
    """Pair schedules covering every (p, q) once per sweep, disjoint within a round."""
    players = list(range(m)) + ([-1] if m % 2 else [])
    size = len(players)
    rounds = []
    for _ in range(size - 1):
        pairs = [(players[i], players[size - 1 - i]) for i in range(size // 2)]
        pairs = [(min(a, b), max(a, b)) for a, b in pairs if a >= 0 and b >= 0]
        rounds.append((np.array([a for a, _ in pairs]), np.array([b for _, b in pairs])))
        players = [players[0]] + [players[-1]] + players[1:-1]
    return rounds


def jacobi_eigen(s, tol: float = 1e-12, max_sweeps: int = 100):
    """Cyclic Jacobi eigensolver for a symmetric matrix.

    Each sweep visits every off-diagonal pair once, in round-robin order so
    that the rotations of a round act on disjoint index pairs and can be
    applied together. Stops when the off-diagonal Frobenius norm is at most
    ``tol * ||s||_F``. Returns unsorted ``(values, vectors)``.
    """
    a = np.array(s, dtype=float)
    m = a.shape[0]
    v = np.eye(m)
    if m == 1:
        return a.diagonal().copy(), v
    scale = np.linalg.norm(a)
    if scale == 0.0:
        return np.zeros(m), v
    rounds = _round_robin(m)
    for _ in range(max_sweeps):
        off = np.linalg.norm(a - np.diag(a.diagonal()))
        if off <= tol * scale:
            return a.diagonal().copy(), v
        for p, q in rounds:
            apq = a[p, q]
            active = np.abs(apq) > 1e-300
            if not active.any():
                continue
            p, q, apq = p[active], q[active], apq[active]
            theta = (a[q, q] - a[p, p]) / (2.0 * apq)
            t = np.sign(theta) / (np.abs(theta) + np.sqrt(1.0 + theta * theta))
            t[theta == 0] = 1.0
            c = 1.0 / np.sqrt(1.0 + t * t)
            sn = t * c
            rp, rq = a[p, :].copy(), a[q, :].copy()
            a[p, :] = c[:, None] * rp - sn[:, None] * rq
            a[q, :] = sn[:, None] * rp + c[:, None] * rq
            cp, cq = a[:, p].copy(), a[:, q].copy()
            a[:, p] = cp * c - cq * sn
            a[:, q] = cp * sn + cq * c
            vp, vq = v[:, p].copy(), v[:, q].copy()
            v[:, p] = vp * c - vq * sn
            v[:, q] = vp * sn + vq * c
    off = np.linalg.norm(a - np.diag(a.diagonal()))
    if off <= tol * scale:
        return a.diagonal().copy(), v
    raise NumericalError(f"Jacobi eigensolver did not converge in {max_sweeps} sweeps")


def sym_eigen(s, method: str = "lapack", sym_tol: float = 1e-8) -> Spectrum:
    """Eigendecomposition of a symmetric matrix, values sorted descending.

    ``method="lapack"`` calls :func:`numpy.linalg.eigh`; ``method="jacobi"``
    uses :func:`jacobi_eigen`. Either way each eigenvector is signed so that
    its largest-magnitude entry is positive.
    """
    s = np.asarray(s, dtype=float)
    _check_symmetric(s, sym_tol)
    s = 0.5 * (s + s.T)
    if method == "lapack":
        try:
            values, vectors = np.linalg.eigh(s)
        except np.linalg.LinAlgError as exc:
            raise NumericalError(f"eigh failed: {exc}") from exc
    elif method == "jacobi":
        values, vectors = jacobi_eigen(s)
    else:
        raise ValueError(f"unknown eigen method {method!r}")
    order = np.argsort(-values, kind="stable")
    return Spectrum(values[order], _fix_signs(vectors[:, order]))


def inv_sqrt_psd(s, floor: float = 1e-10) -> np.ndarray:
    """Symmetric inverse square root of a PSD matrix."""
    spec = sym_eigen(s)
    vals = spec.values
    if vals[-1] <= floor * max(vals[0], 1.0):
        raise NumericalError("matrix is (numerically) singular; cannot whiten")
    return (spec.vectors / np.sqrt(vals)) @ spec.vectors.T


def ols_solve(a, b, ridge: float = 0.0) -> np.ndarray:
    """Minimizer of ``||a @ beta - b||^2 + ridge * ||beta||^2``.

    With ``ridge == 0`` a rank-deficient ``a`` raises
    :class:`SingularSystemError`.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    vector = b.ndim == 1
    if vector:
        b = b[:, None]
    if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
        raise ValueError(f"design must be a non-empty 2-d array, got {a.shape}")
    if b.shape[0] != a.shape[0]:
        raise ValueError("a and b have different row counts")
    if ridge < 0:
        raise ValueError("ridge must be non-negative")
    m = a.shape[1]
    if ridge > 0:
        a_aug = np.vstack([a, np.sqrt(ridge) * np.eye(m)])
        b_aug = np.vstack([b, np.zeros((m, b.shape[1]))])
        beta = np.linalg.lstsq(a_aug, b_aug, rcond=None)[0]
    else:
        beta, _, rank, sv = np.linalg.lstsq(a, b, rcond=None)
        if rank < m or sv[-1] <= 1e-12 * sv[0]:
            raise SingularSystemError("singular normal equations; use ridge > 0")
    return beta[:, 0] if vector else beta


def gaussian_cdf(x):
    return special.ndtr(x)


def gaussian_quantile(prob):
    prob = np.asarray(prob, dtype=float)
    if np.any((prob <= 0) | (prob >= 1)):
        raise ValueError("probability must lie in (0, 1)")
    out = special.ndtri(prob)
    return float(out) if out.ndim == 0 else out
