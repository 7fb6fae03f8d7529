import json
import shutil
import subprocess
import sys

import numpy as np
import pytest

from pod.cli import DEFAULT_SEED, bundled_configs, main
from pod.sim import gen_factor, gen_sdr_model


def write_csv(path, x, y=None, names=None):
    p = x.shape[1]
    header = names or [f"x{i + 1}" for i in range(p)]
    rows = [",".join(header + (["y"] if y is not None else []))]
    for i in range(len(x)):
        cells = [repr(float(v)) for v in x[i]]
        if y is not None:
            cells.append(str(y[i]))
        rows.append(",".join(cells))
    path.write_text("\n".join(rows) + "\n")
    return path


@pytest.fixture
def model1_csv(tmp_path):
    data = gen_sdr_model(1, 150, seed=1)
    return write_csv(tmp_path / "m1.csv", data.x, [repr(float(v)) for v in data.y[:, 0]])


def run(argv, capsys):
    code = main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


def test_determine_writes_result_and_manifest(tmp_path, model1_csv, capsys):
    out = tmp_path / "o"
    code, stdout, _ = run(["determine", "--data", str(model1_csv), "--response", "y",
                           "--reducer", "sir", "--dmax", "4", "--out", str(out)], capsys)
    assert code == 0
    assert f"seed: {DEFAULT_SEED}" in stdout
    result = json.loads((out / "result.json").read_text())
    assert result["d_hat"] == 1
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["config"]["loss"] == "squared"
    assert manifest["artifacts"] == ["result.json"]
    assert "elapsed_seconds" in manifest["timing"]
    assert str(model1_csv) in manifest["inputs"]


def test_manifest_replay_and_threads_are_byte_identical(tmp_path, model1_csv, capsys):
    first, second, third = tmp_path / "a", tmp_path / "b", tmp_path / "c"
    args = ["determine", "--data", str(model1_csv), "--response", "y", "--dmax", "3",
            "--learners", "ols,knn", "--seed", "7"]
    assert run(args + ["--out", str(first)], capsys)[0] == 0
    assert run(["determine", "--manifest", str(first / "manifest.json"), "--out", str(second)],
               capsys)[0] == 0
    assert run(args + ["--threads", "3", "--out", str(third)], capsys)[0] == 0
    ref = (first / "result.json").read_bytes()
    assert (second / "result.json").read_bytes() == ref
    assert (third / "result.json").read_bytes() == ref


def test_test_command(tmp_path, model1_csv, capsys):
    out = tmp_path / "t"
    code, stdout, _ = run(["test", "--data", str(model1_csv), "--response", "y", "--d", "0",
                           "--dmax", "3", "--out", str(out)], capsys)
    assert code == 0
    payload = json.loads((out / "test.json").read_text())
    assert payload["d"] == 0 and payload["reject"] is True
    assert run(["test", "--data", str(model1_csv), "--response", "y", "--d", "5",
                "--dmax", "3", "--out", str(out)], capsys)[0] == 2


@pytest.mark.parametrize("flag,value", [("--alpha", "1.5"), ("--tau", "1"), ("--folds", "1"),
                                        ("--dmax", "0")])
def test_range_errors_exit_2(tmp_path, model1_csv, capsys, flag, value):
    code, _, err = run(["determine", "--data", str(model1_csv), "--response", "y", flag, value,
                        "--out", str(tmp_path)], capsys)
    assert code == 2 and flag in err


def test_data_errors_exit_3(tmp_path, capsys):
    code, _, err = run(["determine", "--data", str(tmp_path / "missing.csv"), "--response", "y",
                        "--out", str(tmp_path)], capsys)
    assert code == 3
    bad = tmp_path / "bad.csv"
    bad.write_text("a,y\n1,2\ninf,3\n")
    code, _, err = run(["determine", "--data", str(bad), "--response", "y",
                        "--out", str(tmp_path)], capsys)
    assert code == 3 and "row 2" in err


def test_numerical_error_exit_4(tmp_path, capsys):
    # two identical columns make the whitening step singular
    g = np.random.default_rng(0)
    col = g.standard_normal(60)
    path = write_csv(tmp_path / "sing.csv", np.c_[col, col, g.standard_normal(60)],
                     [repr(float(v)) for v in g.standard_normal(60)])
    code, _, err = run(["determine", "--data", str(path), "--response", "y", "--reducer", "sir",
                        "--dmax", "2", "--reducer-fit", "once", "--out", str(tmp_path)], capsys)
    assert code == 4 and "numerical" in err


def test_bad_loss_for_data(tmp_path, model1_csv, capsys):
    code, _, _ = run(["determine", "--data", str(model1_csv), "--response", "y", "--loss",
                      "zero-one", "--out", str(tmp_path)], capsys)
    assert code == 2


def test_simulate_bundled_and_list(tmp_path, capsys):
    code, stdout, _ = run(["simulate", "--list"], capsys)
    assert code == 0
    for name in ("table1_weak.json", "table2_model1.json", "table2_model2.json",
                 "fig1_factor.json", "fig2_models.json", "table3_bernoulli.json"):
        assert name in stdout and name in bundled_configs()
    out = tmp_path / "s"
    code, _, _ = run(["simulate", "--config", "table2_model1", "--reps", "2", "--out", str(out)],
                     capsys)
    assert code == 0
    text = (out / "table2_model1.csv").read_text()
    assert text.startswith("#") and "reject_d0" in text


def test_simulate_malformed_json(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{"study": "rejection",\n  "reps": }\n')
    code, _, err = run(["simulate", "--config", str(bad), "--out", str(tmp_path)], capsys)
    assert code == 2 and "line 2" in err and "column" in err
    code, _, err = run(["simulate", "--config", "nope", "--out", str(tmp_path)], capsys)
    assert code == 2


def test_baseline_methods(tmp_path, capsys):
    data, _ = gen_factor("pervasive", 120, 30, seed=2)
    path = write_csv(tmp_path / "f.csv", data.x)
    for method in ("ic", "er", "kapetanios", "onatski-stat"):
        out = tmp_path / method
        code, stdout, _ = run(["baseline", "--data", str(path), "--method", method, "--kmax",
                               "6", "--subsamples", "20", "--out", str(out)], capsys)
        assert code == 0, method
        res = json.loads((out / "baseline.json").read_text())
        assert res["eigenvalues"] == sorted(res["eigenvalues"], reverse=True)
    assert json.loads((tmp_path / "ic" / "baseline.json").read_text())["k_hat"] >= 1
    code, _, err = run(["baseline", "--data", str(path), "--method", "pca", "--out",
                        str(tmp_path)], capsys)
    assert code == 2 and "onatski-stat" in err


def test_baseline_er_flat_spectrum(tmp_path, capsys):
    # orthogonal design with equal column norms has a flat covariance spectrum
    h = np.array([[1, 1, 1, 1], [1, -1, 1, -1], [1, 1, -1, -1], [1, -1, -1, 1]], float)
    x = np.vstack([h[:, 1:], -h[:, 1:]])
    path = write_csv(tmp_path / "flat.csv", x, [0] * len(x))
    code, _, _ = run(["baseline", "--data", str(path), "--response", "y", "--method", "er",
                      "--kmax", "1", "--out", str(tmp_path / "er")], capsys)
    assert code == 0
    assert json.loads((tmp_path / "er" / "baseline.json").read_text())["k_hat"] == 1


def test_threads_env_fallback(tmp_path, model1_csv, capsys, monkeypatch):
    monkeypatch.setenv("POD_THREADS", "x")
    code, _, err = run(["determine", "--data", str(model1_csv), "--response", "y",
                        "--out", str(tmp_path)], capsys)
    assert code == 2 and "POD_THREADS" in err


def test_console_script():
    exe = shutil.which("pod")
    cmd = [exe] if exe else [sys.executable, "-m", "pod.cli"]
    proc = subprocess.run(cmd + ["--version"], capture_output=True, text=True)
    assert proc.returncode == 0 and "pod" in proc.stdout
