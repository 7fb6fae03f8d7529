"""Acceptance criteria 1-9, each checked at its stated tolerance.

Every test records a single PASS / FAIL / SKIP line, printed in the
"acceptance criteria" section of the terminal summary. The Monte Carlo
criteria (1-4) are marked ``slow``; they still run by default.
"""

import json
import math
import os
from contextlib import contextmanager
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest
from scipy import stats

from conftest import ACCEPTANCE_LINES
from pod.baselines import gram_eigenvalues, ic_p1, residual_variances
from pod.cli import main as cli_main
from pod.data import Dataset, derive_rng, derive_seed, load_csv
from pod.engine import CrossFit, FoldPlan, PODConfig, select_order, test_dimensions
from pod.learners import LearnerSpec, parse_learners
from pod.losses import make_loss
from pod.reducers import ReducerSpec
from pod.sim import Scenario, gen_sdr_model, run_rejection_study, run_study, variants_from_dict
from pod.cli import _read_config

Z95 = stats.norm.ppf(0.95)


@contextmanager
def criterion(num, title):
    info = {"detail": ""}
    try:
        yield info
    except pytest.skip.Exception as exc:
        ACCEPTANCE_LINES[num] = f"criterion {num} SKIP  {title}: {exc.msg}"
        raise
    except BaseException:
        ACCEPTANCE_LINES[num] = f"criterion {num} FAIL  {title}: {info['detail']}"
        raise
    ACCEPTANCE_LINES[num] = f"criterion {num} PASS  {title}: {info['detail']}"


def _row(report, label=None):
    for row in report.rows:
        r = dict(zip(report.header, row))
        if r["method"] == "pod" and (label is None or r["variant"] == label):
            return r
    raise AssertionError("no POD row in report")


# 1 -------------------------------------------------------------------------

@pytest.mark.slow
def test_criterion_1_size_calibration_model1():
    with criterion(1, "size calibration, Model 1, n=200, SIR(10), 200 reps") as info:
        doc, _, _ = _read_config("table2_model1")
        report = run_study(doc, reps=200)
        r = _row(report)
        rates = [r[f"reject_d{d}"] for d in range(6)]
        info["detail"] = "reject % d=0..5 = " + ", ".join(f"{v:.1f}" for v in rates)
        assert rates[0] >= 99.0
        for v in rates[1:6]:
            assert 1.0 <= v <= 11.0


# 2 -------------------------------------------------------------------------

@pytest.mark.slow
def test_criterion_2_pervasive_factor_power():
    with criterion(2, "pervasive factors, n=500, p=200, 100 reps") as info:
        sc = Scenario("factor", 500, p=200, regime="pervasive")
        variants = variants_from_dict(
            {"pod": {"reducer": "pca", "learners": "ols,tree,knn,mlp", "dmax": 8,
                     "reducer_fit": "once", "alpha": 0.05}}, sc)
        report = run_rejection_study(sc, variants, reps=100, seed=202)
        r = _row(report)
        rates = [r[f"reject_d{d}"] for d in range(7)]
        p_eq = r["dhat_5"]
        p_over = sum(r[f"dhat_{d}"] for d in range(6, 9))
        info["detail"] = ("reject % d=0..6 = " + ", ".join(f"{v:.0f}" for v in rates)
                          + f"; P(d=5)={p_eq:.2f}, P(d>5)={p_over:.2f}")
        assert all(v == 100.0 for v in rates[:5])
        assert all(1.0 <= v <= 12.0 for v in rates[5:7])
        assert p_eq >= 0.85
        assert p_over <= 0.09


# 3 -------------------------------------------------------------------------

@pytest.mark.slow
def test_criterion_3_loss_target_switching():
    with criterion(3, "Bernoulli, n=2000, DR, 100 reps, alpha=1%") as info:
        sc = Scenario("bernoulli", 2000)
        share = {}
        for loss, target in (("zero-one", 0), ("cross-entropy", 1)):
            cfg = variants_from_dict({"pod": {"reducer": "dr", "learners": "knn,tree",
                                              "loss": loss, "alpha": 0.01,
                                              "reducer_fit": "once"}}, sc)[0].config
            hits = 0
            for rep in range(100):
                data = sc.generate(derive_seed(303, "data", rep))
                res = select_order(data, replace(cfg, seed=derive_seed(303, "pod", rep, loss)))
                hits += res.d_hat == target
            share[loss] = hits / 100
        info["detail"] = (f"P(d=0 | 0-1 loss)={share['zero-one']:.2f}, "
                          f"P(d=1 | cross-entropy)={share['cross-entropy']:.2f}")
        assert share["zero-one"] >= 0.85
        assert share["cross-entropy"] >= 0.85


# 4 -------------------------------------------------------------------------

@pytest.mark.slow
def test_criterion_4_oracle_null_calibration():
    with criterion(4, "oracle-representation null, n=2000, 500 reps") as info:
        cfg = PODConfig(k_folds=5, d_max=4, tau=0.8, reducer=ReducerSpec("fixed"),
                        learners=(LearnerSpec("ols"),))
        ts = []
        for rep in range(500):
            g = derive_rng(4, "oracle-null", rep)
            x = g.standard_normal((2000, 4))  # true coordinates first, then two nuisances
            y = x[:, 0] + 2.0 * x[:, 1] + g.standard_normal(2000)
            res = test_dimensions(Dataset(x, y), replace(cfg, seed=rep), dims=[2])[0]
            ts.append(res.t)
        ts = np.array(ts)
        rate = float(np.mean(ts >= Z95))
        ks = stats.kstest(ts, "norm")
        info["detail"] = (f"rejection rate {100 * rate:.1f}%, KS D={ks.statistic:.4f} "
                          f"p={ks.pvalue:.3f}, mean T={ts.mean():.3f}, sd T={ts.std():.3f}")
        assert 0.025 <= rate <= 0.08
        assert ks.pvalue >= 0.01


# 5 -------------------------------------------------------------------------

def test_criterion_5_shared_o_cancellation():
    with criterion(5, "d=d_max contrast equals (1-tau)(mean_a - mean_b)") as info:
        worst = 0.0
        for inst in range(100):
            g = derive_rng(5, "instance", inst)
            n = int(g.integers(30, 200))
            k = int(g.integers(2, 6))
            tau = float(g.choice([0.0, 0.3, 0.5, 0.8]))
            d_max = int(g.integers(1, 4))
            x = g.standard_normal((n, d_max + 1))
            y = np.sin(x[:, 0]) + g.standard_normal(n)
            learners = parse_learners(str(g.choice(["ols", "knn", "tree", "ols,knn"])))
            cfg = PODConfig(k_folds=k, d_max=d_max, tau=tau, reducer=ReducerSpec("fixed"),
                            learners=tuple(learners), seed=inst)
            cf = CrossFit(Dataset(x, y), cfg)
            cand, full = cf.fold_risks(d_max)
            for j, (c, f) in enumerate(zip(cand, full)):
                pos_a, pos_b, _ = cf._positions[j]
                want = (1 - c.tau) * (f.losses[pos_a].mean() - f.losses[pos_b].mean())
                worst = max(worst, abs((c.risk - f.risk) - want))
        info["detail"] = f"max deviation {worst:.2e} over 100 instances"
        assert worst <= 1e-12


# 6 -------------------------------------------------------------------------

def test_criterion_6_ic_identity_and_rank_recovery():
    with criterion(6, "IC_p1 residual identity and exact-rank recovery") as info:
        worst = 0.0
        for seed in range(40):
            g = derive_rng(6, "matrix", seed)
            n, p = int(g.integers(10, 60)), int(g.integers(10, 60))
            x = g.standard_normal((n, p)) * g.uniform(0.1, 10)
            xc = x - x.mean(axis=0)
            u, s, vt = np.linalg.svd(xc, full_matrices=False)
            v = residual_variances(gram_eigenvalues(x), 8)
            for k in range(9):
                resid = xc - (u[:, :k] * s[:k]) @ vt[:k]
                worst = max(worst, abs(v[k] - np.sum(resid ** 2) / (n * p)))
        k_hats = []
        for r in (1, 2, 3):
            g = derive_rng(6, "rank", r)
            x = g.standard_normal((200, r)) @ g.standard_normal((r, 20))
            x = x + 1e-6 * g.standard_normal((200, 20))
            k_hats.append(ic_p1(x, 8).k_hat)
        info["detail"] = f"max |V(k) - SVD residual| = {worst:.2e}; k_hat for r=1,2,3: {k_hats}"
        assert worst <= 1e-10
        assert k_hats == [1, 2, 3]


# 7 -------------------------------------------------------------------------

# precomputed in exact rational arithmetic, independent of the package
HAND = {
    "L0": (10 / 9, 43 / 3),
    "L1": (8126 / 2205, 107 / 21),
    "s0": (178 / 27, 566 / 9),
    "s1": (23828494 / 5788125, 179258 / 3087),
    "psi": 3.331972789115646,
    "nu2": 65.83347318864054,
    "t": 1.0058974039440298,
}


def test_criterion_7_hand_oracle():
    with criterion(7, "n=12, K=2, tau=0, d=0 hand oracle") as info:
        y = np.array([3, 1, 4, 1, 5, 9, 2, 6, 5, 3, 5, 8], dtype=float)
        data = Dataset(np.arange(1.0, 13.0)[:, None], y)
        plan = FoldPlan((np.arange(0, 12, 2), np.arange(1, 12, 2)),
                        (np.array([0, 2, 4]), np.array([1, 3, 5])),
                        (np.array([6, 8, 10]), np.array([7, 9, 11])),
                        (np.array([], dtype=int), np.array([], dtype=int)),
                        0.0, (0.0, 0.0), 0.0)
        cfg = PODConfig(k_folds=2, d_max=1, tau=0.0, reducer=ReducerSpec("fixed"),
                        learners=(LearnerSpec("ols"),))
        cf = CrossFit(data, cfg, plan)
        cand, full = cf.fold_risks(0)
        res = cf.test(0)
        got = {"L0": tuple(c.risk for c in cand), "L1": tuple(f.risk for f in full),
               "s0": tuple(c.sigma2 for c in cand), "s1": tuple(f.sigma2 for f in full),
               "psi": res.psi, "nu2": res.nu2, "t": res.t}
        errs = {}
        for key, want in HAND.items():
            errs[key] = float(np.max(np.abs(np.subtract(got[key], want))))
        worst = max(errs.values())
        info["detail"] = f"max abs error {worst:.2e} (T = {res.t:.12f})"
        assert worst <= 1e-10, errs


# 8 -------------------------------------------------------------------------

def _artifacts(out: Path):
    manifest = json.loads((out / "manifest.json").read_text())
    files = {name: (out / name).read_bytes() for name in manifest["artifacts"]}
    manifest.pop("timing")
    return files, manifest


def test_criterion_8_cli_determinism(tmp_path, capsys):
    with criterion(8, "CLI outputs byte-identical across manifest replay and threads") as info:
        data = gen_sdr_model(1, 150, seed=8)
        csv = tmp_path / "m1.csv"
        lines = [",".join([f"x{i}" for i in range(1, 11)] + ["y"])]
        for xi, yi in zip(data.x, data.y[:, 0]):
            lines.append(",".join(repr(float(v)) for v in list(xi) + [yi]))
        csv.write_text("\n".join(lines) + "\n")
        commands = {
            "determine": ["determine", "--data", str(csv), "--response", "y", "--dmax", "4",
                          "--learners", "ols,knn,tree", "--reducer", "sir"],
            "test": ["test", "--data", str(csv), "--response", "y", "--dmax", "4", "--d", "1",
                     "--learners", "ols,knn"],
            "simulate": ["simulate", "--config", "table2_model1", "--reps", "3"],
            "baseline": ["baseline", "--data", str(csv), "--response", "y", "--method",
                         "kapetanios", "--kmax", "4", "--subsamples", "30"],
        }
        checked = []
        for name, argv in commands.items():
            first, replay, threaded = (tmp_path / f"{name}_{t}" for t in ("a", "b", "c"))
            assert cli_main(argv + ["--threads", "1", "--out", str(first)]) == 0
            manifest = str(first / "manifest.json")
            assert cli_main([name, "--manifest", manifest, "--threads", "1",
                             "--out", str(replay)]) == 0
            assert cli_main([name, "--manifest", manifest, "--threads", "3",
                             "--out", str(threaded)]) == 0
            ref = _artifacts(first)
            assert _artifacts(replay) == ref, name
            assert _artifacts(threaded) == ref, name
            checked.append(f"{name}({len(ref[0])} file)")
        capsys.readouterr()
        info["detail"] = "identical: " + ", ".join(checked)


# 9 -------------------------------------------------------------------------

def _pendigits_path():
    candidates = [os.environ.get("POD_PENDIGITS"),
                  Path(__file__).parent / "data" / "pendigits.tra",
                  Path(__file__).parent / "data" / "pendigits_train.csv"]
    for c in candidates:
        if c and Path(c).is_file():
            return Path(c)
    return None


def _pendigits_csv(path: Path, tmp_path: Path) -> Path:
    """Accept the headerless UCI training file or a CSV whose last column is the digit."""
    first = path.read_text().splitlines()[0].split(",")
    try:
        [float(v) for v in first]
    except ValueError:
        header = [c.strip() for c in first]
        body = path.read_text().splitlines()[1:]
    else:
        header = None
        body = path.read_text().splitlines()
    out = tmp_path / "pendigits.csv"
    cols = [f"f{i}" for i in range(1, 17)] + ["digit"]
    if header is not None:
        cols = header[:-1] + ["digit"]
    out.write_text("\n".join([",".join(cols)] + [l for l in body if l.strip()]) + "\n")
    return out


def test_criterion_9_pendigits(tmp_path):
    with criterion(9, "PenDigits {0,6,9}: modal d_hat = 2") as info:
        path = _pendigits_path()
        if path is None:
            pytest.skip("PenDigits training file not found (set POD_PENDIGITS)")
        csv = _pendigits_csv(path, tmp_path)
        data = load_csv(csv, "digit", "categorical", keep_labels=["0", "6", "9"])
        assert (data.n, data.p, data.n_classes) == (2219, 16, 3)
        modes = {}
        for loss in ("zero-one", "cross-entropy"):
            for alpha in (0.01, 0.05):
                cfg = PODConfig(alpha=alpha, loss=make_loss(loss, 3),
                                reducer=ReducerSpec("dr"),
                                learners=tuple(parse_learners("knn,tree")))
                d_hats = [select_order(data, replace(cfg, seed=derive_seed(9, s))).d_hat
                          for s in range(20)]
                modes[(loss, alpha)] = int(np.bincount(d_hats).argmax())
        info["detail"] = ", ".join(f"{l}@{a}: {m}" for (l, a), m in modes.items())
        assert all(m == 2 for m in modes.values())
