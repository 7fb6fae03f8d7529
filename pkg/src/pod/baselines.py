"""Eigenvalue-based order estimators and test statistics for factor models.

Every statistic has a spectrum-level entry point taking a raw descending
eigenvalue vector, so it can be checked without any linear algebra.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .data import derive_rng
from .numerics import NumericalError, sample_covariance

IC = "ic_p1"
ER = "er"
KAPETANIOS = "kapetanios"
ONATSKI = "onatski"


@dataclass(frozen=True, eq=False)
class BaselineResult:
    method: str
    k_hat: int | None = None
    eigenvalues: np.ndarray = field(default_factory=lambda: np.zeros(0))
    values: np.ndarray | None = None  # criterion values or per-d statistics
    critical_values: np.ndarray | None = None
    rejects: np.ndarray | None = None

    def to_dict(self) -> dict:
        out = {"method": self.method, "k_hat": self.k_hat,
               "eigenvalues": [float(v) for v in self.eigenvalues]}
        for name in ("values", "critical_values"):
            arr = getattr(self, name)
            if arr is not None:
                out[name] = [float(v) for v in arr]
        if self.rejects is not None:
            out["rejects"] = [bool(v) for v in self.rejects]
        return out


def _as_matrix(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim != 2:
        raise ValueError("expected a 2-d data matrix")
    return x


def covariance_eigenvalues(x) -> np.ndarray:
    """Descending eigenvalues of the 1/n sample covariance (length p).

    When ``n < p`` the n x n Gram matrix is decomposed instead and the
    remaining eigenvalues are zero.
    """
    x = _as_matrix(x)
    n, p = x.shape
    if n >= p:
        eigs = np.linalg.eigvalsh(sample_covariance(x))
    else:
        xc = x - x.mean(axis=0)
        eigs = np.concatenate([np.linalg.eigvalsh(xc @ xc.T / n), np.zeros(p - n)])
    return np.clip(np.sort(eigs)[::-1], 0.0, None)


# ---------------------------------------------------------------------------
# IC_p1
# ---------------------------------------------------------------------------

def residual_variances(eigs, k_max: int) -> np.ndarray:
    """``V(k)``, k = 0..k_max, as tail sums of the scaled Gram eigenvalues."""
    eigs = np.asarray(eigs, dtype=float)
    tails = np.cumsum(eigs[::-1])[::-1]  # tails[k] = sum_{j>=k} eigs[j]
    return np.array([tails[k] if k < len(eigs) else 0.0 for k in range(k_max + 1)])


def ic_p1_spectrum(eigs, n: int, p: int, k_max: int):
    """Criterion values for k = 1..k_max and the minimizing k (ties to smaller k)."""
    v = residual_variances(eigs, k_max)
    penalty = (n + p) / (n * p) * math.log((n + p) / (n * p))
    ic = []
    for k in range(1, k_max + 1):
        if v[k] <= 0:
            raise NumericalError(f"residual variance V({k}) is not positive; lower k_max")
        ic.append(math.log(v[k]) - k * penalty)
    ic = np.array(ic)
    return int(np.argmin(ic)) + 1, ic


def gram_eigenvalues(x) -> np.ndarray:
    """Descending eigenvalues of ``X X^T / (np)`` of the column-centered data.

    The smaller of the two Gram matrices is decomposed; both share their
    nonzero spectrum.
    """
    x = _as_matrix(x)
    n, p = x.shape
    xc = x - x.mean(axis=0)
    gram = xc.T @ xc if p <= n else xc @ xc.T
    eigs = np.linalg.eigvalsh(gram / (n * p))
    return np.clip(np.sort(eigs)[::-1], 0.0, None)


def ic_p1(x, k_max: int) -> BaselineResult:
    x = _as_matrix(x)
    n, p = x.shape
    if not 1 <= k_max < min(n, p):
        raise ValueError(f"k_max must lie in [1, {min(n, p) - 1}]")
    eigs = gram_eigenvalues(x)
    k_hat, ic = ic_p1_spectrum(eigs, n, p, k_max)
    return BaselineResult(IC, k_hat, eigs, ic)


# ---------------------------------------------------------------------------
# Eigenvalue ratio
# ---------------------------------------------------------------------------

def eigenvalue_ratio_spectrum(eigs, k_max: int):
    eigs = np.asarray(eigs, dtype=float)
    if k_max < 1 or k_max + 1 > len(eigs):
        raise ValueError("need 1 <= k_max and k_max + 1 <= number of eigenvalues")
    denom = eigs[1:k_max + 1]
    if np.any(denom <= 0):
        raise NumericalError("zero eigenvalue inside the ratio range; lower k_max")
    ratios = eigs[:k_max] / denom
    return int(np.argmax(ratios)) + 1, ratios


def eigenvalue_ratio(x, k_max: int) -> BaselineResult:
    x = _as_matrix(x)
    if k_max + 1 > min(x.shape):
        raise ValueError(f"k_max must satisfy k_max + 1 <= min(n, p) = {min(x.shape)}")
    eigs = covariance_eigenvalues(x)
    k_hat, ratios = eigenvalue_ratio_spectrum(eigs, k_max)
    return BaselineResult(ER, k_hat, eigs, ratios)


# ---------------------------------------------------------------------------
# Kapetanios
# ---------------------------------------------------------------------------

def kapetanios_spectrum(eigs, d: int, d_max: int) -> float:
    """``lambda_{d+1} - lambda_{d_max+1}`` (1-based eigenvalue indices)."""
    eigs = np.asarray(eigs, dtype=float)
    if not 0 <= d < d_max:
        raise ValueError("need 0 <= d < d_max")
    if d_max + 1 > len(eigs):
        raise ValueError("need d_max + 1 eigenvalues")
    return float(eigs[d] - eigs[d_max])


def kapetanios_stat(x, d: int, d_max: int) -> float:
    return kapetanios_spectrum(covariance_eigenvalues(x), d, d_max)


def _padded_eigs(x, length):
    eigs = covariance_eigenvalues(x)
    if len(eigs) < length:
        eigs = np.concatenate([eigs, np.zeros(length - len(eigs))])
    return eigs


def kapetanios_test(x, d_max: int, alpha: float = 0.05, n_sub: int = 200,
                    subsample: int | None = None, seed: int = 0,
                    centered: bool = True) -> BaselineResult:
    """Sequential test with subsampling critical values.

    Subsamples of ``subsample`` rows (default ``floor(0.7 n)``) are drawn
    without replacement. With ``centered=True`` step ``d`` rejects when
    ``sqrt(n) S_n > q``, where ``q`` is the ``1 - alpha`` quantile of
    ``sqrt(m) (S_m - S_n)`` over subsamples. With ``centered=False`` the
    full-sample statistic is compared directly with the ``1 - alpha``
    quantile of the subsample statistics. ``k_hat`` is the first
    non-rejected ``d`` (``d_max`` when all reject). ``critical_values`` are
    reported on the scale of the raw statistic.
    """
    x = _as_matrix(x)
    n, p = x.shape
    if d_max + 1 > p:
        raise ValueError("need d_max + 1 <= p")
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    m = int(math.floor(0.7 * n)) if subsample is None else subsample
    if not 2 <= m <= n:
        raise ValueError(f"subsample size must lie in [2, {n}]")
    if m <= d_max + 1:
        warnings.warn("subsample too small for the spectrum; eigenvalues padded with 0",
                      stacklevel=2)
    eigs = covariance_eigenvalues(x)
    stats = np.array([kapetanios_spectrum(eigs, d, d_max) for d in range(d_max)])
    draws = np.empty((n_sub, d_max))
    for b in range(n_sub):
        rows = derive_rng(seed, "kapetanios", b).choice(n, size=m, replace=False)
        sub = _padded_eigs(x[np.sort(rows)], d_max + 1)
        draws[b] = [kapetanios_spectrum(sub, d, d_max) for d in range(d_max)]
    if centered:
        q = np.quantile(math.sqrt(m) * (draws - stats), 1.0 - alpha, axis=0)
        crit = q / math.sqrt(n)
    else:
        crit = np.quantile(draws, 1.0 - alpha, axis=0)
    rejects = stats > crit
    k_hat = next((d for d in range(d_max) if not rejects[d]), d_max)
    return BaselineResult(KAPETANIOS, k_hat, eigs, stats, crit, rejects)


# ---------------------------------------------------------------------------
# Onatski
# ---------------------------------------------------------------------------

def onatski_spectrum(eigs, d: int, d_max: int) -> float:
    """``max_{d < i <= d_max} (l_i - l_{i+1}) / (l_{i+1} - l_{i+2})``, 1-based."""
    eigs = np.asarray(eigs, dtype=float)
    if not 0 <= d < d_max:
        raise ValueError("need 0 <= d < d_max")
    if d_max + 2 > len(eigs):
        raise ValueError("need d_max + 2 eigenvalues")
    best = -math.inf
    for i in range(d + 1, d_max + 1):
        num = eigs[i - 1] - eigs[i]
        den = eigs[i] - eigs[i + 1]
        ratio = math.inf if den <= 0 and num > 0 else (0.0 if den <= 0 else num / den)
        best = max(best, ratio)
    return float(best)


def onatski_eigenvalues(x) -> np.ndarray:
    """Descending eigenvalues of ``sum_i Xc_i Xc_i^H / m`` with ``Xc_i = X_i + i X_{i+m}``.

    ``m = floor(n / 2)``; with odd ``n`` the last row is unused. Rows are
    paired in their given order, so the result depends on row order.
    """
    x = _as_matrix(x)
    n = x.shape[0]
    if n < 4:
        raise ValueError("need at least 4 observations")
    m = n // 2
    xt = x[:m] + 1j * x[m:2 * m]
    h = xt.T @ xt.conj() / m
    return np.sort(np.linalg.eigvalsh(h))[::-1]


def onatski_stat(x, d: int, d_max: int) -> float:
    return onatski_spectrum(onatski_eigenvalues(x), d, d_max)


def onatski_stats(x, d_max: int) -> BaselineResult:
    eigs = onatski_eigenvalues(x)
    stats = np.array([onatski_spectrum(eigs, d, d_max) for d in range(d_max)])
    return BaselineResult(ONATSKI, None, eigs, stats)
