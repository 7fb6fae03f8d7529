"""Synthetic data generators and Monte Carlo studies.

Two study types are supported:

* ``rejection``: every replication runs the test at every ``d`` (no early
  stop) and the report gives per-step rejection rates, together with the
  distribution of the sequential choice.
* ``order``: over a grid of sample sizes, the probabilities that each
  method's estimate is correct, too large or too small.

Each replication draws its data and fold seeds from the study seed, the
sample size and the replication index alone, so results do not depend on
execution order or on the number of worker processes.
"""

from __future__ import annotations

import csv
import io
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import toeplitz

from .baselines import eigenvalue_ratio, ic_p1, kapetanios_test
from .data import Dataset, derive_rng, derive_seed
from .engine import ConfigError, PODConfig, sequential_choice, test_dimensions
from .learners import parse_learners
from .losses import make_loss
from .numerics import gaussian_quantile
from .reducers import ReducerSpec

D_STAR_FACTOR = 5
SDR_P = 10
SDR_SIGMA = 0.5
SDR_D_STAR = {1: 1, 2: 2, 3: 1, 4: 2, 5: 3, 6: 1, 7: 2}
SDR_CLASSES = {6: 3, 7: 4}


# ---------------------------------------------------------------------------
# generators
# ---------------------------------------------------------------------------

def weak_loadings(p: int) -> np.ndarray:
    """Weak-factor loading matrix (p x 5).

    Rows 1..5 are ``sqrt(3 / sqrt(p))``; row ``l > 5`` of column ``j`` is
    ``a * sqrt(3 / (p - j))`` with ``a = -1`` when ``l`` is a multiple of ``j``
    and ``+1`` otherwise (1-based indices).
    """
    if p <= D_STAR_FACTOR:
        raise ValueError(f"weak loadings need p > {D_STAR_FACTOR}")
    b = np.empty((p, D_STAR_FACTOR))
    rows = np.arange(1, p + 1)
    for j in range(1, D_STAR_FACTOR + 1):
        sign = np.where(rows % j == 0, -1.0, 1.0)
        b[:, j - 1] = sign * np.sqrt(3.0 / (p - j))
    b[:D_STAR_FACTOR] = np.sqrt(3.0 * p ** -0.5)
    return b


def gen_factor(regime: str, n: int, p: int, seed: int, weak_sd: float = 0.55):
    """Factor regression ``Y = m(f) + eps``, ``X = B f + u``.

    Returns ``(dataset, f)``. ``m(f) = f1 + 2 f2 + f3 + 3 f4 + 2 f5`` and
    ``eps ~ N(0, 0.1)`` (variance 0.1). The weak regime uses
    :func:`weak_loadings` with idiosyncratic sd ``weak_sd``; the pervasive
    regime draws ``B[l, j] ~ U(0, j)`` and uses idiosyncratic sd 5.
    """
    if p < D_STAR_FACTOR:
        raise ValueError(f"p must be at least {D_STAR_FACTOR}")
    if n < 1:
        raise ValueError("n must be positive")
    rng = derive_rng(seed, "factor", regime)
    if regime == "weak":
        b = weak_loadings(p)
        noise_sd = weak_sd
    elif regime == "pervasive":
        b = rng.uniform(0.0, np.arange(1, D_STAR_FACTOR + 1), size=(p, D_STAR_FACTOR))
        noise_sd = 5.0
    else:
        raise ValueError(f"unknown regime {regime!r}; use 'weak' or 'pervasive'")
    f = rng.standard_normal((n, D_STAR_FACTOR))
    u = noise_sd * rng.standard_normal((n, p))
    eps = np.sqrt(0.1) * rng.standard_normal(n)
    y = f @ np.array([1.0, 2.0, 1.0, 3.0, 2.0]) + eps
    return Dataset(f @ b.T + u, y), f


def gen_sdr_model(model: int, n: int, seed: int, sigma: float = SDR_SIGMA) -> Dataset:
    """Models 1-7 with ``X ~ N(0, I_10)``.

    Models 6 and 7 are categorical: 6 is Binomial(2, 1 / (1 + exp(-X1)))
    with labels 0..2, 7 adds two thresholded indices with independent noise
    draws, labels 0..3.
    """
    if model not in SDR_D_STAR:
        raise ValueError(f"unknown model {model}; choose 1..7")
    if n < 1:
        raise ValueError("n must be positive")
    rng = derive_rng(seed, "sdr", model)
    x = rng.standard_normal((n, SDR_P))
    e = rng.standard_normal(n)
    x1, x2, x3 = x[:, 0], x[:, 1], x[:, 2]
    if model == 1:
        y = x[:, :4].sum(axis=1) + sigma * e
    elif model == 2:
        y = 0.4 * (x1 + x2 + x3) ** 2 + 3.0 * np.sin((x1 + x[:, 8] + 3.0 * x[:, 9]) / 4.0) + sigma * e
    elif model == 3:
        y = np.sin(x1) + sigma * e
    elif model == 4:
        y = x1 ** 2 + 0.5 * np.sin(x2) + sigma * e
    elif model == 5:
        y = np.abs(x1) + x2 * (x2 + x3 + 1.0) + sigma * e
    elif model == 6:
        prob = 1.0 / (1.0 + np.exp(-x1))
        labels = rng.binomial(2, prob)
        return Dataset(x, labels, kind="categorical", n_classes=3)
    else:
        e2 = rng.standard_normal(n)
        labels = ((x[:, :5].sum(axis=1) + sigma * e > 1).astype(int)
                  + 2 * (x[:, 5:].sum(axis=1) + sigma * e2 > 0).astype(int))
        return Dataset(x, labels, kind="categorical", n_classes=4)
    return Dataset(x, y)


def gen_bernoulli(n: int, seed: int, p: int = 10) -> Dataset:
    """``X ~ N(0, S)`` with ``S[i, j] = 0.5^|i-j|``; ``Y = 1`` when ``X1 > 0``, else Bernoulli(0.6)."""
    if n < 1:
        raise ValueError("n must be positive")
    rng = derive_rng(seed, "bernoulli")
    chol = np.linalg.cholesky(toeplitz(0.5 ** np.arange(p)))
    x = rng.standard_normal((n, p)) @ chol.T
    coin = rng.uniform(size=n) < 0.6
    y = np.where(x[:, 0] > 0, 1, coin.astype(int))
    return Dataset(x, y, kind="categorical", n_classes=2)


# ---------------------------------------------------------------------------
# scenarios
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Scenario:
    kind: str  # factor | sdr | bernoulli
    n: int
    p: int | None = None
    regime: str = "pervasive"
    model: int = 1
    weak_sd: float = 0.55

    def __post_init__(self):
        if self.kind not in ("factor", "sdr", "bernoulli"):
            raise ConfigError(f"unknown scenario kind {self.kind!r}")
        if self.n < 1:
            raise ConfigError("n must be positive")
        if self.kind == "factor" and (self.p is None or self.p < D_STAR_FACTOR):
            raise ConfigError(f"factor scenarios need p >= {D_STAR_FACTOR}")
        if self.kind == "sdr" and self.model not in SDR_D_STAR:
            raise ConfigError(f"unknown model {self.model}")

    @property
    def d_star(self) -> int:
        if self.kind == "factor":
            return D_STAR_FACTOR
        if self.kind == "sdr":
            return SDR_D_STAR[self.model]
        return 1

    def generate(self, seed: int) -> Dataset:
        if self.kind == "factor":
            return gen_factor(self.regime, self.n, self.p, seed, self.weak_sd)[0]
        if self.kind == "sdr":
            return gen_sdr_model(self.model, self.n, seed)
        return gen_bernoulli(self.n, seed, self.p or 10)

    def with_n(self, n: int) -> "Scenario":
        return replace(self, n=n)


@dataclass(frozen=True)
class Variant:
    """One POD configuration evaluated in a study (a column group of a table)."""

    label: str
    config: PODConfig
    alphas: tuple
    d_star: int | None = None  # overrides the scenario's order (e.g. 0-1 loss targets)


@dataclass
class StudyReport:
    study: str
    header: list
    rows: list
    config: dict
    reps: int
    runtime: float = field(default=0.0, compare=False)

    def to_csv(self) -> str:
        buf = io.StringIO()
        for key, value in _flatten(self.config):
            buf.write(f"# {key}: {value}\n")
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self.header)
        for row in self.rows:
            writer.writerow([_fmt(v) for v in row])
        return buf.getvalue()


def _flatten(obj, prefix=""):
    if isinstance(obj, dict):
        for k in sorted(obj):
            yield from _flatten(obj[k], f"{prefix}{k}.")
    else:
        yield prefix.rstrip("."), json.dumps(obj, sort_keys=True)


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.6g}"
    return v


# ---------------------------------------------------------------------------
# configuration parsing
# ---------------------------------------------------------------------------

_POD_KEYS = {"folds", "dmax", "tau", "alpha", "alphas", "loss", "reducer", "slices", "ridge",
             "standardize", "learners", "inner_folds", "reducer_fit", "label", "d_star"}


def build_pod_config(settings: dict, scenario: Scenario, seed: int = 0, threads: int = 1):
    """Turn a JSON method block into ``(PODConfig, alphas)``."""
    unknown = set(settings) - _POD_KEYS
    if unknown:
        raise ConfigError(f"unknown POD settings: {', '.join(sorted(unknown))}")
    n_classes = None
    if scenario.kind == "bernoulli":
        n_classes = 2
    elif scenario.kind == "sdr" and scenario.model in SDR_CLASSES:
        n_classes = SDR_CLASSES[scenario.model]
    default_loss = "cross-entropy" if n_classes else "squared"
    try:
        loss = make_loss(settings.get("loss", default_loss), n_classes)
        reducer = ReducerSpec(settings.get("reducer", "pca"), settings.get("slices"),
                              float(settings.get("ridge", 0.0)),
                              bool(settings.get("standardize", False)))
        learners = parse_learners(settings.get("learners", "ols"))
        alphas = settings.get("alphas", [settings.get("alpha", 0.05)])
        alphas = tuple(float(a) for a in alphas)
        for a in alphas:
            if not 0 < a < 1:
                raise ConfigError(f"alpha {a} outside (0, 1)")
        config = PODConfig(
            k_folds=int(settings.get("folds", 5)),
            d_max=int(settings.get("dmax", 8)),
            tau=float(settings.get("tau", 0.8)),
            alpha=alphas[0],
            loss=loss,
            reducer=reducer,
            learners=learners,
            inner_folds=int(settings.get("inner_folds", 2)),
            reducer_fit=settings.get("reducer_fit", "once").replace("-", "_"),
            seed=seed,
            threads=1,
        )
    except ConfigError:
        raise
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc
    return config, alphas


def scenario_from_dict(d: dict) -> Scenario:
    try:
        return Scenario(kind=d["kind"], n=int(d.get("n", 200)), p=d.get("p"),
                        regime=d.get("regime", "pervasive"), model=int(d.get("model", 1)),
                        weak_sd=float(d.get("weak_sd", 0.55)))
    except KeyError as exc:
        raise ConfigError(f"scenario is missing {exc}") from None
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad scenario: {exc}") from exc


def variants_from_dict(study: dict, scenario: Scenario) -> list[Variant]:
    blocks = study.get("pod", {})
    if isinstance(blocks, dict):
        blocks = [blocks]
    out = []
    for i, block in enumerate(blocks):
        config, alphas = build_pod_config(block, scenario)
        out.append(Variant(block.get("label", f"pod{i}" if len(blocks) > 1 else "pod"),
                           config, alphas, block.get("d_star")))
    return out


# ---------------------------------------------------------------------------
# replications
# ---------------------------------------------------------------------------

def _replicate(args):
    scenario, variants, baselines, study_seed, rep = args
    data_seed = derive_seed(study_seed, "data", scenario.n, rep)
    data = scenario.generate(data_seed)
    out = {"t": [], "baselines": {}}
    for v in variants:
        cfg = replace(v.config, seed=derive_seed(study_seed, "pod", scenario.n, rep, v.label))
        out["t"].append([r.t for r in test_dimensions(data, cfg)])
    k_max = variants[0].config.d_max if variants else 8
    for name in baselines:
        b_seed = derive_seed(study_seed, "baseline", scenario.n, rep, name)
        if name == "ic":
            out["baselines"][name] = ic_p1(data.x, k_max).k_hat
        elif name == "er":
            out["baselines"][name] = eigenvalue_ratio(data.x, k_max).k_hat
        elif name == "kapetanios":
            res = kapetanios_test(data.x, k_max, 0.05, seed=b_seed)
            out["baselines"][name] = [bool(r) for r in res.rejects]
        else:
            raise ConfigError(f"unknown baseline {name!r}")
    return out


def _run_reps(scenario, variants, baselines, seed, reps, threads):
    jobs = [(scenario, variants, baselines, seed, r) for r in range(reps)]
    if threads > 1 and reps > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(_replicate, jobs))
    return [_replicate(j) for j in jobs]


def _order_triple(d_hats, d_star):
    d_hats = np.asarray(d_hats)
    reps = len(d_hats)
    correct = int(np.sum(d_hats == d_star))
    over = int(np.sum(d_hats > d_star))
    under = reps - correct - over
    return correct / reps, over / reps, under / reps


def run_rejection_study(scenario: Scenario, variants, reps: int, seed: int = 0,
                        threads: int = 1, baselines=()) -> StudyReport:
    """Per-step rejection rates (in %) for every variant and level."""
    if reps < 1:
        raise ConfigError("reps must be at least 1")
    start = time.perf_counter()
    results = _run_reps(scenario, variants, tuple(baselines), seed, reps, threads)
    d_max = max(v.config.d_max for v in variants)
    header = (["method", "variant", "n", "alpha", "reps"]
              + [f"reject_d{d}" for d in range(d_max)]
              + ["p_correct", "p_over", "p_under", "mean_dhat"]
              + [f"dhat_{d}" for d in range(d_max + 1)])
    rows = []
    for i, v in enumerate(variants):
        t = np.array([r["t"][i] for r in results])  # reps x d_max
        d_star = scenario.d_star if v.d_star is None else v.d_star
        for alpha in v.alphas:
            rej = t >= gaussian_quantile(1.0 - alpha)
            d_hats = [sequential_choice(row, v.config.d_max) for row in rej]
            rates = list(100.0 * rej.mean(axis=0)) + [""] * (d_max - v.config.d_max)
            counts = np.bincount(d_hats, minlength=d_max + 1) / reps
            rows.append(["pod", v.label, scenario.n, alpha, reps] + rates
                        + list(_order_triple(d_hats, d_star)) + [float(np.mean(d_hats))]
                        + list(counts))
    for name in baselines:
        if name != "kapetanios":
            continue
        rej = np.array([r["baselines"][name] for r in results])
        d_hats = [sequential_choice(row, rej.shape[1]) for row in rej]
        rates = list(100.0 * rej.mean(axis=0)) + [""] * (d_max - rej.shape[1])
        counts = np.bincount(d_hats, minlength=d_max + 1) / reps
        rows.append([name, name, scenario.n, 0.05, reps] + rates
                    + list(_order_triple(d_hats, scenario.d_star)) + [float(np.mean(d_hats))]
                    + list(counts))
    echo = {"scenario": scenario.__dict__.copy(), "reps": reps, "seed": seed,
            "variants": {v.label: dict(v.config.to_dict(), alphas=list(v.alphas),
                                       d_star=v.d_star if v.d_star is not None else scenario.d_star)
                         for v in variants},
            "baselines": list(baselines)}
    return StudyReport("rejection", header, rows, echo, reps, time.perf_counter() - start)


def run_order_study(scenario: Scenario, n_grid, variants, reps: int, seed: int = 0,
                    threads: int = 1, baselines=("ic", "er")) -> StudyReport:
    """(correct, over, under) probabilities for each n, method and level."""
    if reps < 1:
        raise ConfigError("reps must be at least 1")
    if not n_grid:
        raise ConfigError("n grid is empty")
    start = time.perf_counter()
    header = ["method", "variant", "n", "alpha", "reps", "p_correct", "p_over", "p_under",
              "mean_dhat"]
    rows = []
    for n in n_grid:
        sc = scenario.with_n(int(n))
        results = _run_reps(sc, variants, tuple(baselines), seed, reps, threads)
        for i, v in enumerate(variants):
            t = np.array([r["t"][i] for r in results])
            d_star = sc.d_star if v.d_star is None else v.d_star
            for alpha in v.alphas:
                rej = t >= gaussian_quantile(1.0 - alpha)
                d_hats = [sequential_choice(row, v.config.d_max) for row in rej]
                rows.append(["pod", v.label, sc.n, alpha, reps]
                            + list(_order_triple(d_hats, d_star)) + [float(np.mean(d_hats))])
        for name in baselines:
            if name not in ("ic", "er"):
                continue
            d_hats = [r["baselines"][name] for r in results]
            rows.append([name, name, sc.n, "", reps]
                        + list(_order_triple(d_hats, sc.d_star)) + [float(np.mean(d_hats))])
    echo = {"scenario": scenario.__dict__.copy(), "n_grid": list(n_grid), "reps": reps,
            "seed": seed,
            "variants": {v.label: dict(v.config.to_dict(), alphas=list(v.alphas),
                                       d_star=v.d_star if v.d_star is not None else scenario.d_star)
                         for v in variants},
            "baselines": list(baselines)}
    return StudyReport("order", header, rows, echo, reps, time.perf_counter() - start)


def run_study(study: dict, threads: int = 1, reps: int | None = None) -> StudyReport:
    """Run one study block of a JSON scenario config."""
    kind = study.get("study", "rejection")
    scenario = scenario_from_dict(study.get("scenario", {}))
    variants = variants_from_dict(study, scenario)
    n_reps = int(reps if reps is not None else study.get("reps", 200))
    seed = int(study.get("seed", 0))
    if kind == "rejection":
        return run_rejection_study(scenario, variants, n_reps, seed, threads,
                                   study.get("baselines", ()))
    if kind == "order":
        return run_order_study(scenario, study.get("n_grid", [scenario.n]), variants, n_reps,
                               seed, threads, study.get("baselines", ("ic", "er")))
    raise ConfigError(f"unknown study type {kind!r}; use 'rejection' or 'order'")
