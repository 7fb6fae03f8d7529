"""Cross-fitted predictiveness-gap tests and sequential order selection.

For each fold the reduction map and the prediction rules are trained on the
other folds. The held-out fold is split into parts ``a``, ``b`` and a shared
part ``o``; the candidate rule is scored on ``o`` and ``a``, the full
``d_max`` rule on ``o`` and ``b``. Averaging the fold contrasts gives
``psi``; with the variance estimate ``nu2`` this yields a one-sided
z-statistic per candidate dimension, and the selected order is the first
dimension whose test does not reject.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset, derive_rng, derive_seed
from .learners import LearnerSpec, fit as fit_learner, predict, select_learner
from .losses import Loss, SQUARED
from .numerics import gaussian_cdf, gaussian_quantile
from .reducers import ReducerSpec, apply as apply_map, fit_reducer

PER_FOLD = "per_fold"
ONCE = "once"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PODConfig:
    k_folds: int = 5
    d_max: int = 8
    tau: float = 0.8
    alpha: float = 0.05
    loss: Loss = Loss(SQUARED)
    reducer: ReducerSpec = ReducerSpec()
    learners: tuple = (LearnerSpec("ols"),)
    inner_folds: int = 2
    reducer_fit: str = PER_FOLD
    seed: int = 0
    threads: int = 1

    def __post_init__(self):
        if self.k_folds < 2:
            raise ConfigError("k_folds must be at least 2")
        if self.d_max < 1:
            raise ConfigError("d_max must be at least 1")
        if not 0.0 <= self.tau < 1.0:
            raise ConfigError("tau must lie in [0, 1)")
        if not 0.0 < self.alpha < 1.0:
            raise ConfigError("alpha must lie in (0, 1)")
        if self.reducer_fit not in (PER_FOLD, ONCE):
            raise ConfigError(f"reducer_fit must be {PER_FOLD!r} or {ONCE!r}")
        if not self.learners:
            raise ConfigError("at least one learner is required")
        if self.inner_folds < 2:
            raise ConfigError("inner_folds must be at least 2")
        object.__setattr__(self, "learners", tuple(self.learners))

    def to_dict(self) -> dict:
        return {
            "k_folds": self.k_folds,
            "d_max": self.d_max,
            "tau": self.tau,
            "alpha": self.alpha,
            "loss": self.loss.kind,
            "n_classes": self.loss.n_classes,
            "reducer": self.reducer.kind,
            "slices": self.reducer.n_slices,
            "reducer_ridge": self.reducer.ridge,
            "reducer_standardize": self.reducer.standardize,
            "learners": [s.label() for s in self.learners],
            "inner_folds": self.inner_folds,
            "reducer_fit": self.reducer_fit,
            "seed": self.seed,
        }


# ---------------------------------------------------------------------------
# fold plan
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class FoldPlan:
    """K disjoint folds, each split into ``a``, ``b`` (equal size) and ``o``.

    ``tau_folds[k] = |o_k| / (|a_k| + |o_k|)``; ``tau_realized`` pools the
    folds, ``sum |o_k| / sum (|a_k| + |o_k|)``.
    """

    folds: tuple
    a: tuple
    b: tuple
    o: tuple
    tau_nominal: float
    tau_folds: tuple
    tau_realized: float

    @property
    def n(self) -> int:
        return sum(len(f) for f in self.folds)

    @property
    def k(self) -> int:
        return len(self.folds)


def split_sizes(m: int, tau: float) -> tuple[int, int]:
    """Sizes ``(s, o)`` with ``|a| = |b| = s`` for a fold of size ``m``.

    ``s = round((1 - tau) m / (2 - tau))`` (halves round up), clamped to
    ``[1, m // 2]``.
    """
    if m < 2:
        raise ConfigError(f"fold of size {m} cannot be split")
    s = math.floor((1.0 - tau) * m / (2.0 - tau) + 0.5)
    s = min(max(s, 1), m // 2)
    o = m - 2 * s
    if o < 0:
        raise ConfigError(f"fold of size {m} cannot be split with tau={tau}")
    return s, o


def make_fold_plan(n: int, k_folds: int, tau: float, seed: int) -> FoldPlan:
    if k_folds < 2:
        raise ConfigError("k_folds must be at least 2")
    if not 0.0 <= tau < 1.0:
        raise ConfigError("tau must lie in [0, 1)")
    need = 3 * k_folds if tau > 0 else 2 * k_folds
    if n < need:
        raise ConfigError(f"n={n} too small for {k_folds} folds (need at least {need})")
    perm = derive_rng(seed, "folds").permutation(n)
    folds = np.array_split(perm, k_folds)
    parts_a, parts_b, parts_o, taus = [], [], [], []
    n_o = n_ao = 0
    for k, fold in enumerate(folds):
        s, o = split_sizes(len(fold), tau)
        shuffled = derive_rng(seed, "subsplit", k).permutation(fold)
        parts_a.append(np.sort(shuffled[:s]))
        parts_b.append(np.sort(shuffled[s:2 * s]))
        parts_o.append(np.sort(shuffled[2 * s:]))
        taus.append(o / (s + o))
        n_o += o
        n_ao += s + o
    return FoldPlan(tuple(np.sort(f) for f in folds), tuple(parts_a), tuple(parts_b),
                    tuple(parts_o), tau, tuple(taus), n_o / n_ao)


# ---------------------------------------------------------------------------
# fold risks
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class FoldRisk:
    """Risk of one fitted rule on one held-out fold.

    ``risk_ab`` is the mean loss on ``a`` (candidate arm) or ``b`` (full
    arm); ``losses`` covers the whole fold, in the fold's index order.
    """

    fold: int
    d: int
    arm: str
    risk_o: float
    risk_ab: float
    risk: float
    losses: np.ndarray
    sigma2: float
    tau: float
    learner: str


def _fold_risk(losses, pos_o, pos_ab, tau):
    risk_ab = float(losses[pos_ab].mean())
    if len(pos_o):
        risk_o = float(losses[pos_o].mean())
        risk = tau * risk_o + (1.0 - tau) * risk_ab
    else:
        risk_o = float("nan")
        risk = risk_ab
    sigma2 = float(np.mean((losses - losses.mean()) ** 2))
    return risk_o, risk_ab, risk, sigma2


class CrossFit:
    """Per-fold state shared by every candidate dimension.

    Holds the fold scores and the cached full-dimension fits, so that the
    ``d_max`` rule of each fold is trained exactly once.
    """

    def __init__(self, data: Dataset, config: PODConfig, plan: FoldPlan | None = None):
        self.data = data
        self.config = config
        self.plan = plan or make_fold_plan(data.n, config.k_folds, config.tau, config.seed)
        if self.plan.n != data.n:
            raise ConfigError("fold plan does not match the dataset size")
        if config.loss.categorical and not data.is_categorical:
            raise ConfigError(f"{config.loss.kind} loss needs a categorical response")
        if not config.loss.categorical and data.is_categorical:
            raise ConfigError("squared loss needs a continuous response")
        if config.loss.categorical and config.loss.n_classes != data.n_classes:
            raise ConfigError("loss class count does not match the data")
        self._scores: dict[int, np.ndarray] = {}
        self._full: dict[int, FoldRisk] = {}
        self._positions = []
        for k, fold in enumerate(self.plan.folds):
            self._positions.append(tuple(np.searchsorted(fold, part) for part in
                                         (self.plan.a[k], self.plan.b[k], self.plan.o[k])))
        self._shared_map = None

    # -- reduction ---------------------------------------------------------

    def train_index(self, k: int) -> np.ndarray:
        mask = np.ones(self.data.n, dtype=bool)
        mask[self.plan.folds[k]] = False
        return np.flatnonzero(mask)

    def scores(self, k: int) -> np.ndarray:
        if k not in self._scores:
            cfg = self.config
            if cfg.reducer_fit == ONCE:
                if self._shared_map is None:
                    self._shared_map = fit_reducer(cfg.reducer, self.data, cfg.d_max)
                rmap = self._shared_map
            else:
                rmap = fit_reducer(cfg.reducer, self.data.subset(self.train_index(k)), cfg.d_max)
            self._scores[k] = apply_map(rmap, self.data.x)
        return self._scores[k]

    # -- rules -------------------------------------------------------------

    def _losses(self, k: int, d: int) -> tuple[np.ndarray, str]:
        cfg = self.config
        r = self.scores(k)
        train = self.train_index(k)
        fold = self.plan.folds[k]
        y = self.data.y
        spec = select_learner(cfg.learners, r[train], d, y[train], cfg.loss, cfg.inner_folds,
                              seed=derive_seed(cfg.seed, "select", k, d))
        pred = fit_learner(spec, r[train], d, y[train], cfg.loss,
                           seed=derive_seed(cfg.seed, "fit", k, d))
        losses = cfg.loss.per_sample(y[fold], predict(pred, r[fold]))
        return losses, pred.spec.label()

    def full_risk(self, k: int) -> FoldRisk:
        if k not in self._full:
            d_max = self.config.d_max
            losses, label = self._losses(k, d_max)
            pos_a, pos_b, pos_o = self._positions[k]
            tau = self.plan.tau_folds[k]
            risk_o, risk_ab, risk, sigma2 = _fold_risk(losses, pos_o, pos_b, tau)
            self._full[k] = FoldRisk(k, d_max, "full", risk_o, risk_ab, risk, losses, sigma2,
                                     tau, label)
        return self._full[k]

    def candidate_risk(self, k: int, d: int) -> FoldRisk:
        if not 0 <= d <= self.config.d_max:
            raise ConfigError(f"d={d} outside [0, {self.config.d_max}]")
        if d == self.config.d_max:
            full = self.full_risk(k)
            losses, label = full.losses, full.learner
        else:
            try:
                losses, label = self._losses(k, d)
            except Exception as exc:
                raise type(exc)(f"fold {k}, d={d}: {exc}") from exc
        pos_a, pos_b, pos_o = self._positions[k]
        tau = self.plan.tau_folds[k]
        risk_o, risk_ab, risk, sigma2 = _fold_risk(losses, pos_o, pos_a, tau)
        return FoldRisk(k, d, "candidate", risk_o, risk_ab, risk, losses, sigma2, tau, label)

    def fold_risks(self, d: int) -> tuple[list[FoldRisk], list[FoldRisk]]:
        ks = range(self.plan.k)
        threads = max(1, self.config.threads)
        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                full = list(pool.map(self.full_risk, ks))
                cand = list(pool.map(lambda k: self.candidate_risk(k, d), ks))
        else:
            full = [self.full_risk(k) for k in ks]
            cand = [self.candidate_risk(k, d) for k in ks]
        return cand, full

    def test(self, d: int) -> "TestResult":
        cand, full = self.fold_risks(d)
        psi = psi_hat(cand, full)
        nu2 = variance_hat(cand, full, self.plan.tau_realized)
        t, p = t_stat(psi, nu2, self.data.n, self.plan.tau_realized)
        z = gaussian_quantile(1.0 - self.config.alpha)
        return TestResult(d, psi, nu2, t, z, p, bool(t >= z),
                          tuple(c.risk - f.risk for c, f in zip(cand, full)),
                          tuple(c.learner for c in cand))


def crossfit_dimension(data: Dataset, config: PODConfig, plan: FoldPlan, d: int,
                       cache: CrossFit | None = None):
    """Candidate and full-dimension fold risks for dimension ``d``."""
    cache = cache or CrossFit(data, config, plan)
    return cache.fold_risks(d)


# ---------------------------------------------------------------------------
# statistics
# ---------------------------------------------------------------------------

def psi_hat(fold_risks_d, fold_risks_dmax) -> float:
    if len(fold_risks_d) != len(fold_risks_dmax) or not fold_risks_d:
        raise ValueError("fold risk lists must be non-empty and of equal length")
    return float(np.mean([c.risk - f.risk for c, f in zip(fold_risks_d, fold_risks_dmax)]))


def variance_hat(fold_risks_d, fold_risks_dmax, tau: float) -> float:
    if len(fold_risks_d) != len(fold_risks_dmax) or not fold_risks_d:
        raise ValueError("fold risk lists must be non-empty and of equal length")
    total = np.mean([c.sigma2 + f.sigma2 for c, f in zip(fold_risks_d, fold_risks_dmax)])
    return float(max((1.0 - tau) * total, 0.0))


def t_stat(psi: float, nu2: float, n: int, tau: float) -> tuple[float, float]:
    """One-sided statistic ``sqrt(n / (2 - tau)) * psi / sqrt(nu2)`` and its p-value.

    Zero variance gives 0 when ``psi == 0`` and an infinite statistic with the
    sign of ``psi`` otherwise.
    """
    if nu2 < 0:
        raise ValueError("variance must be non-negative")
    if nu2 == 0:
        t = 0.0 if psi == 0 else math.copysign(math.inf, psi)
    else:
        t = math.sqrt(n / (2.0 - tau)) * psi / math.sqrt(nu2)
    return t, float(1.0 - gaussian_cdf(t))


# ---------------------------------------------------------------------------
# results
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TestResult:
    __test__ = False  # not a pytest test class

    d: int
    psi: float
    nu2: float
    t: float
    z_crit: float
    p_value: float
    reject: bool
    fold_contrasts: tuple = ()
    learners: tuple = ()

    def to_dict(self) -> dict:
        return {
            "d": self.d,
            "psi": self.psi,
            "nu2": self.nu2,
            "t": _finite_or_str(self.t),
            "z_crit": self.z_crit,
            "p_value": self.p_value,
            "reject": self.reject,
            "fold_contrasts": list(self.fold_contrasts),
            "learners": list(self.learners),
        }


def _finite_or_str(v: float):
    return v if math.isfinite(v) else ("inf" if v > 0 else "-inf")


@dataclass(frozen=True)
class PODResult:
    d_hat: int
    trail: tuple
    config: dict
    n: int
    tau_realized: float
    elapsed: float = field(default=0.0, compare=False)

    def to_dict(self) -> dict:
        # wall-clock time is left out so identical runs serialize identically
        return {
            "d_hat": self.d_hat,
            "n": self.n,
            "tau_realized": self.tau_realized,
            "trail": [t.to_dict() for t in self.trail],
            "config": self.config,
        }


def sequential_choice(rejections, d_max: int) -> int:
    """First non-rejected dimension, or ``d_max`` when every test rejects."""
    for d, rej in enumerate(rejections):
        if not rej:
            return d
    return d_max


def select_order(data: Dataset, config: PODConfig, plan: FoldPlan | None = None) -> PODResult:
    """Test d = 0, 1, ... and stop at the first non-rejection."""
    start = time.perf_counter()
    cf = CrossFit(data, config, plan)
    trail = []
    d_hat = config.d_max
    for d in range(config.d_max):
        res = cf.test(d)
        trail.append(res)
        if not res.reject:
            d_hat = d
            break
    return PODResult(d_hat, tuple(trail), config.to_dict(), data.n, cf.plan.tau_realized,
                     time.perf_counter() - start)


def test_dimensions(data: Dataset, config: PODConfig, dims=None,
                    plan: FoldPlan | None = None) -> list[TestResult]:
    """Run the test at every requested dimension (default ``0..d_max-1``), without stopping."""
    cf = CrossFit(data, config, plan)
    dims = range(config.d_max) if dims is None else dims
    return [cf.test(d) for d in dims]


test_dimensions.__test__ = False  # keep pytest from collecting the imported name
