"""Command-line interface: ``pod determine | test | simulate | baseline``.

Machine-readable results go to files under ``--out``; stdout carries a
human-readable summary. Result files never contain timings or the thread
count, so repeated runs give identical bytes; the wall-clock time is kept in
``manifest.json`` only.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from importlib import resources
from pathlib import Path

from . import __version__
from .baselines import eigenvalue_ratio, ic_p1, kapetanios_test, onatski_stats
from .data import CATEGORICAL, CONTINUOUS, DataError, load_csv, load_matrix
from .engine import ConfigError, PODConfig, CrossFit, select_order
from .learners import LearnerError, parse_learners
from .losses import LossError, make_loss
from .numerics import NumericalError
from .reducers import ReducerSpec
from .sim import run_study

DEFAULT_SEED = 20240917
EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 2, 3, 4

# resolved defaults for every option; ``None`` on the command line means "not given"
POD_DEFAULTS = {
    "data": None,
    "response": None,
    "response_kind": CONTINUOUS,
    "keep_classes": None,
    "loss": None,
    "reducer": "pca",
    "slices": None,
    "dmax": 8,
    "folds": 5,
    "tau": 0.8,
    "alpha": 0.05,
    "learners": "ols",
    "inner_folds": 2,
    "reducer_fit": "per-fold",
    "seed": DEFAULT_SEED,
}
TEST_DEFAULTS = dict(POD_DEFAULTS, d=0)
SIM_DEFAULTS = {"config": None, "reps": None}
BASELINE_DEFAULTS = {
    "data": None,
    "response": None,
    "method": None,
    "kmax": 8,
    "alpha": 0.05,
    "subsamples": 200,
    "subsample_size": None,
    "seed": DEFAULT_SEED,
}
BASELINE_METHODS = ("ic", "er", "kapetanios", "onatski-stat")


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


# ---------------------------------------------------------------------------
# argument handling
# ---------------------------------------------------------------------------

def _pod_options(p: argparse.ArgumentParser):
    p.add_argument("--data", help="CSV file with a header row")
    p.add_argument("--response", help="response column name(s), comma separated")
    p.add_argument("--response-kind", choices=(CONTINUOUS, CATEGORICAL))
    p.add_argument("--keep-classes", help="comma list of labels to keep (categorical only)")
    p.add_argument("--loss", help="squared | zero-one | cross-entropy")
    p.add_argument("--reducer", help="pca | sir | dr | rrr")
    p.add_argument("--slices", type=int, help="slices for sir/dr (continuous response)")
    p.add_argument("--dmax", type=int, help="search limit")
    p.add_argument("--folds", type=int, help="number of cross-fitting folds")
    p.add_argument("--tau", type=float, help="overlap proportion in [0, 1)")
    p.add_argument("--alpha", type=float, help="significance level in (0, 1)")
    p.add_argument("--learners", help="candidate learners, e.g. ols,knn:5,tree:4:10,mlp:5")
    p.add_argument("--inner-folds", type=int, help="folds for learner selection")
    p.add_argument("--reducer-fit", choices=("per-fold", "once"))
    p.add_argument("--seed", type=int)


def _common(p: argparse.ArgumentParser):
    p.add_argument("--threads", type=int, help="worker cap (env POD_THREADS)")
    p.add_argument("--out", default="pod_out", help="output directory (default: pod_out)")
    p.add_argument("--manifest", help="manifest.json of an earlier run to replay")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pod", description="Predictive order determination")
    parser.add_argument("--version", action="version", version=f"pod {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    det = sub.add_parser("determine", help="select the order d by sequential testing")
    _pod_options(det)
    _common(det)

    tst = sub.add_parser("test", help="run the test at a single dimension d")
    _pod_options(tst)
    tst.add_argument("--d", type=int, help="dimension to test (default 0)")
    _common(tst)

    sim = sub.add_parser("simulate", help="run a Monte Carlo study from a JSON config")
    sim.add_argument("--config", help="JSON file, or the name of a bundled config")
    sim.add_argument("--reps", type=int, help="override the replication count")
    sim.add_argument("--list", action="store_true", help="list bundled configs and exit")
    _common(sim)

    base = sub.add_parser("baseline", help="eigenvalue-based order estimators and statistics")
    base.add_argument("--data")
    base.add_argument("--response", help="columns to drop before the analysis")
    base.add_argument("--method", help="|".join(BASELINE_METHODS))
    base.add_argument("--kmax", type=int)
    base.add_argument("--alpha", type=float)
    base.add_argument("--subsamples", type=int, help="kapetanios: number of subsamples")
    base.add_argument("--subsample-size", type=int, help="kapetanios: rows per subsample")
    base.add_argument("--seed", type=int)
    _common(base)
    return parser


def _resolve(args, defaults: dict) -> dict:
    """Merge command line, manifest and defaults (in that order of priority)."""
    saved = {}
    if args.manifest:
        try:
            with open(args.manifest, encoding="utf-8") as fh:
                manifest = json.load(fh)
        except OSError as exc:
            raise CliError(EXIT_CONFIG, f"--manifest: {exc}") from None
        except json.JSONDecodeError as exc:
            raise CliError(EXIT_CONFIG, f"--manifest: invalid JSON at line {exc.lineno}, "
                                        f"column {exc.colno}: {exc.msg}") from None
        if manifest.get("command") != args.command:
            raise CliError(EXIT_CONFIG, f"--manifest was written by "
                                        f"'{manifest.get('command')}', not '{args.command}'")
        saved = manifest.get("config", {})
    out = {}
    for key, default in defaults.items():
        value = getattr(args, key, None)
        if value is None:
            value = saved.get(key, default)
        out[key] = value
    return out


def _threads(args) -> int:
    if args.threads is not None:
        n = args.threads
    else:
        env = os.environ.get("POD_THREADS")
        try:
            n = int(env) if env else 1
        except ValueError:
            raise CliError(EXIT_CONFIG, f"POD_THREADS must be an integer, got {env!r}") from None
    if n < 1:
        raise CliError(EXIT_CONFIG, "--threads must be at least 1")
    return n


def _digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _write_manifest(out: Path, command: str, config: dict, inputs: list, artifacts: list,
                    elapsed: float):
    manifest = {
        "command": command,
        "version": __version__,
        "config": config,
        "seed": config.get("seed"),
        "inputs": {str(p): _digest(p) for p in inputs},
        "artifacts": sorted(artifacts),
        "timing": {"elapsed_seconds": round(elapsed, 3)},
    }
    _write_json(out / "manifest.json", manifest)


def _outdir(args) -> Path:
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CliError(EXIT_CONFIG, f"--out: {exc}") from None
    return out


# ---------------------------------------------------------------------------
# POD commands
# ---------------------------------------------------------------------------

def _check_range(cfg: dict):
    if not 0 < cfg["alpha"] < 1:
        raise CliError(EXIT_CONFIG, f"--alpha must lie in (0, 1), got {cfg['alpha']}")
    if not 0 <= cfg["tau"] < 1:
        raise CliError(EXIT_CONFIG, f"--tau must lie in [0, 1), got {cfg['tau']}")
    if cfg["folds"] < 2:
        raise CliError(EXIT_CONFIG, f"--folds must be at least 2, got {cfg['folds']}")
    if cfg["dmax"] < 1:
        raise CliError(EXIT_CONFIG, f"--dmax must be at least 1, got {cfg['dmax']}")
    if cfg["slices"] is not None and cfg["slices"] < 2:
        raise CliError(EXIT_CONFIG, f"--slices must be at least 2, got {cfg['slices']}")
    if cfg["data"] is None:
        raise CliError(EXIT_CONFIG, "--data is required")
    if cfg["response"] is None:
        raise CliError(EXIT_CONFIG, "--response is required")


def _load(cfg: dict):
    keep = cfg.get("keep_classes")
    keep = [k.strip() for k in keep.split(",")] if keep else None
    if keep and cfg["response_kind"] != CATEGORICAL:
        raise CliError(EXIT_CONFIG, "--keep-classes needs --response-kind categorical")
    return load_csv(cfg["data"], cfg["response"], cfg["response_kind"], keep)


def _pod_config(cfg: dict, data, threads: int) -> PODConfig:
    loss_name = cfg["loss"] or ("cross-entropy" if data.is_categorical else "squared")
    cfg["loss"] = loss_name  # materialized for the manifest
    try:
        loss = make_loss(loss_name, data.n_classes if data.is_categorical else None)
        reducer = ReducerSpec(cfg["reducer"], cfg["slices"])
        learners = parse_learners(cfg["learners"])
        return PODConfig(k_folds=cfg["folds"], d_max=cfg["dmax"], tau=cfg["tau"],
                         alpha=cfg["alpha"], loss=loss, reducer=reducer, learners=learners,
                         inner_folds=cfg["inner_folds"],
                         reducer_fit=cfg["reducer_fit"].replace("-", "_"),
                         seed=cfg["seed"], threads=threads)
    except (LossError, LearnerError) as exc:
        raise CliError(EXIT_CONFIG, str(exc)) from None
    except ValueError as exc:
        raise CliError(EXIT_CONFIG, str(exc)) from None


def _table(trail) -> str:
    lines = [f"{'d':>3} {'psi':>11} {'nu2':>11} {'T':>9} {'p-value':>9}  reject"]
    for t in trail:
        lines.append(f"{t.d:>3} {t.psi:>11.5g} {t.nu2:>11.5g} {t.t:>9.4g} {t.p_value:>9.4g}  "
                     f"{'yes' if t.reject else 'no'}")
    return "\n".join(lines)


def cmd_determine(args) -> int:
    cfg = _resolve(args, POD_DEFAULTS)
    _check_range(cfg)
    threads = _threads(args)
    print(f"seed: {cfg['seed']}")
    data = _load(cfg)
    config = _pod_config(cfg, data, threads)
    start = time.perf_counter()
    result = select_order(data, config)
    out = _outdir(args)
    _write_json(out / "result.json", result.to_dict())
    _write_manifest(out, "determine", cfg, [cfg["data"]], ["result.json"],
                    time.perf_counter() - start)
    print(_table(result.trail))
    print(f"selected d = {result.d_hat}  (n={data.n}, p={data.p}, "
          f"tau realized={result.tau_realized:.4f})")
    print(f"wrote {out / 'result.json'}; elapsed {time.perf_counter() - start:.2f}s")
    return 0


def cmd_test(args) -> int:
    cfg = _resolve(args, TEST_DEFAULTS)
    _check_range(cfg)
    threads = _threads(args)
    print(f"seed: {cfg['seed']}")
    data = _load(cfg)
    config = _pod_config(cfg, data, threads)
    if not 0 <= cfg["d"] < config.d_max:
        raise CliError(EXIT_CONFIG, f"--d must lie in [0, {config.d_max - 1}], got {cfg['d']}")
    start = time.perf_counter()
    cf = CrossFit(data, config)
    res = cf.test(cfg["d"])
    out = _outdir(args)
    payload = dict(res.to_dict(), n=data.n, tau_realized=cf.plan.tau_realized,
                   config=config.to_dict())
    _write_json(out / "test.json", payload)
    _write_manifest(out, "test", cfg, [cfg["data"]], ["test.json"],
                    time.perf_counter() - start)
    print(_table([res]))
    print(f"wrote {out / 'test.json'}; elapsed {time.perf_counter() - start:.2f}s")
    return 0


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------

def bundled_configs() -> list[str]:
    root = resources.files("pod") / "configs"
    return sorted(p.name for p in root.iterdir() if p.name.endswith(".json"))


def _read_config(name: str):
    path = Path(name)
    if path.is_file():
        text = path.read_text(encoding="utf-8")
        source = str(path)
    else:
        fname = name if name.endswith(".json") else name + ".json"
        res = resources.files("pod") / "configs" / fname
        if not res.is_file():
            raise CliError(EXIT_CONFIG, f"--config: no file or bundled config named {name!r} "
                                        f"(bundled: {', '.join(bundled_configs())})")
        text = res.read_text(encoding="utf-8")
        source = f"bundled:{fname}"
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CliError(EXIT_CONFIG, f"--config {name}: invalid JSON at line {exc.lineno}, "
                                    f"column {exc.colno}: {exc.msg}") from None
    if not isinstance(doc, dict):
        raise CliError(EXIT_CONFIG, f"--config {name}: top level must be an object")
    return doc, text, source


def cmd_simulate(args) -> int:
    if args.list:
        print("\n".join(bundled_configs()))
        return 0
    cfg = _resolve(args, SIM_DEFAULTS)
    if cfg["config"] is None:
        raise CliError(EXIT_CONFIG, "--config is required")
    if cfg["reps"] is not None and cfg["reps"] < 1:
        raise CliError(EXIT_CONFIG, "--reps must be at least 1")
    threads = _threads(args)
    doc, text, source = _read_config(cfg["config"])
    studies = doc.get("studies", [doc])
    base = doc.get("name") or Path(cfg["config"]).stem
    out = _outdir(args)
    artifacts = []
    start = time.perf_counter()
    for i, study in enumerate(studies):
        name = study.get("name") or (base if len(studies) == 1 else f"{base}_{i}")
        report = run_study(study, threads=threads, reps=cfg["reps"])
        fname = f"{name}.csv"
        (out / fname).write_text(report.to_csv(), encoding="utf-8")
        artifacts.append(fname)
        print(f"== {name} ({report.study} study, {report.reps} reps, {report.runtime:.1f}s)")
        print(",".join(report.header))
        for row in report.rows:
            print(",".join(str(v if not isinstance(v, float) else f"{v:.4g}") for v in row))
    manifest_cfg = dict(cfg, config_source=source,
                        config_sha256=hashlib.sha256(text.encode("utf-8")).hexdigest())
    inputs = [cfg["config"]] if Path(cfg["config"]).is_file() else []
    _write_manifest(out, "simulate", manifest_cfg, inputs, artifacts,
                    time.perf_counter() - start)
    print(f"wrote {', '.join(str(out / a) for a in artifacts)}; "
          f"elapsed {time.perf_counter() - start:.2f}s")
    return 0


# ---------------------------------------------------------------------------
# baseline
# ---------------------------------------------------------------------------

def cmd_baseline(args) -> int:
    cfg = _resolve(args, BASELINE_DEFAULTS)
    if cfg["method"] not in BASELINE_METHODS:
        raise CliError(EXIT_CONFIG, f"--method must be one of {', '.join(BASELINE_METHODS)}"
                                    f" (got {cfg['method']!r})")
    if cfg["data"] is None:
        raise CliError(EXIT_CONFIG, "--data is required")
    if cfg["kmax"] < 1:
        raise CliError(EXIT_CONFIG, "--kmax must be at least 1")
    if not 0 < cfg["alpha"] < 1:
        raise CliError(EXIT_CONFIG, f"--alpha must lie in (0, 1), got {cfg['alpha']}")
    _threads(args)
    print(f"seed: {cfg['seed']}")
    drop = [c.strip() for c in cfg["response"].split(",")] if cfg["response"] else []
    x, _ = load_matrix(cfg["data"], drop)
    start = time.perf_counter()
    try:
        method = cfg["method"]
        if method == "ic":
            res = ic_p1(x, cfg["kmax"])
        elif method == "er":
            res = eigenvalue_ratio(x, cfg["kmax"])
        elif method == "kapetanios":
            res = kapetanios_test(x, cfg["kmax"], cfg["alpha"], cfg["subsamples"],
                                  cfg["subsample_size"], cfg["seed"])
        else:
            res = onatski_stats(x, cfg["kmax"])
    except ValueError as exc:
        raise CliError(EXIT_CONFIG, str(exc)) from None
    out = _outdir(args)
    _write_json(out / "baseline.json", res.to_dict())
    _write_manifest(out, "baseline", cfg, [cfg["data"]], ["baseline.json"],
                    time.perf_counter() - start)
    if res.k_hat is not None:
        print(f"{cfg['method']}: k_hat = {res.k_hat}")
    if res.values is not None:
        print("values: " + " ".join(f"{v:.5g}" for v in res.values))
    print("leading eigenvalues: " + " ".join(f"{v:.5g}" for v in res.eigenvalues[:10]))
    print(f"wrote {out / 'baseline.json'}; elapsed {time.perf_counter() - start:.2f}s")
    return 0


COMMANDS = {"determine": cmd_determine, "test": cmd_test, "simulate": cmd_simulate,
            "baseline": cmd_baseline}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (ConfigError, LossError, LearnerError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
