from __future__ import annotations

import json

import numpy as np
import pytest

from clpqr.cli import (EXIT_DATA, EXIT_NUMERIC, EXIT_USAGE, UsageError, dumps, main,
                       parse_error, parse_lambda_grid, parse_split)
from clpqr.distributions import GED, MixtureTwoNormals
from clpqr.oracle import least_squares_closed
from clpqr.preprocess import DataError, load_csv
from clpqr.solver import objective


def write_csv(path, header, rows):
    lines = [",".join(header)] + [",".join(repr(float(v)) for v in r) for r in rows]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return str(path)


@pytest.fixture
def toy(tmp_path):
    g = np.random.default_rng(50)
    X = g.standard_normal((40, 3))
    X[:, 2] = (X[:, 2] > 0).astype(float)
    y = 1.0 + X @ np.array([2.0, -1.0, 0.5]) + 0.3 * g.standard_normal(40)
    return write_csv(tmp_path / "toy.csv", ["a", "b", "dummy", "y"], np.column_stack([X, y]))


def run(capsys, argv):
    code = main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


# ---------------------------------------------------------------- load_csv


def test_standardize_two_columns(tmp_path):
    g = np.random.default_rng(51)
    path = write_csv(tmp_path / "t.csv", ["x", "y"], g.standard_normal((30, 2)) * 3 + 1)
    d, rep = load_csv(path, "y", standardize=True)
    for v in (d.X[:, 0], d.y):
        assert abs(v.mean()) < 1e-12 and abs(v.var() - 1) < 1e-12
    assert set(rep.means) == {"x", "y"}


def test_add_squares_doubles_columns(toy):
    d, rep = load_csv(toy, "y", standardize=True, add_squares=True)
    assert d.m == 6 and rep.columns[3:] == ["a^2", "b^2", "dummy^2"]
    sq = d.X[:, 3]
    assert abs(sq.mean()) < 1e-12 and abs(sq.var() - 1) < 1e-12
    d2, _ = load_csv(toy, "y", standardize=True, add_squares=True, restandardize_squares=False)
    np.testing.assert_allclose(d2.X[:, 3], d2.X[:, 0] ** 2)


def test_excluded_column_passes_through(toy):
    raw, _ = load_csv(toy, "y")
    d, rep = load_csv(toy, "y", standardize=True, add_squares=True, exclude_cols=["dummy"])
    assert d.X[:, 2].tobytes() == raw.X[:, 2].tobytes()
    assert "dummy^2" not in rep.columns and d.m == 5


def test_constant_column_reported(tmp_path):
    rows = np.column_stack([np.ones(10), np.arange(10.0), np.arange(10.0) ** 2])
    path = write_csv(tmp_path / "c.csv", ["k", "x", "y"], rows)
    d, rep = load_csv(path, "y", standardize=True)
    assert rep.constant_columns == ["k"] and np.all(d.X[:, 0] == 1.0)


def test_load_errors(tmp_path, toy):
    with pytest.raises(DataError, match="not found"):
        load_csv(toy, "nope")
    with pytest.raises(DataError, match="not found"):
        load_csv(toy, "y", exclude_cols=["zz"])
    bad = tmp_path / "bad.csv"
    bad.write_text("x,y\n1,2\n3,abc\n")
    with pytest.raises(DataError, match="row 2"):
        load_csv(str(bad), "y")
    with pytest.raises(DataError):
        load_csv(str(tmp_path / "missing.csv"), "y")
    short = tmp_path / "short.csv"
    short.write_text("x,y\n1\n")
    with pytest.raises(DataError, match="fields"):
        load_csv(str(short), "y")


# ---------------------------------------------------------------- parsing


def test_lambda_grid_parsing():
    g = parse_lambda_grid("0.01:100:5", 100)
    np.testing.assert_allclose(g, [0.01, 0.1, 1, 10, 100])
    g0 = parse_lambda_grid("0:10:4", 100)
    assert g0[0] == 0.0 and g0.size == 4 and g0[-1] == pytest.approx(10)
    assert parse_lambda_grid(None, 100).size == 30
    for bad in ("1:2", "a:b:c", "2:1:3", "-1:1:3"):
        with pytest.raises(UsageError):
            parse_lambda_grid(bad, 100)


def test_split_and_error_parsing():
    assert parse_split("200:150:156") == (200, 150, 156)
    with pytest.raises(UsageError):
        parse_split("1:2")
    assert isinstance(parse_error("ged:1:5"), GED)
    assert isinstance(parse_error("mixture:0.3"), MixtureTwoNormals)
    with pytest.raises(UsageError):
        parse_error("lognormal")


def test_dumps_is_deterministic():
    s = dumps({"b": [1.0, np.float64(0.1)], "a": np.int64(3), "c": float("nan"), "d": True})
    assert s == '{"a": 3, "b": [1.0, 0.10000000000000001], "c": null, "d": true}'
    assert json.loads(s)["b"][1] == 0.1


# ---------------------------------------------------------------- commands


def test_are_closed(capsys):
    code, out, _ = run(capsys, ["are", "--dist", "ged", "--alpha", "1", "--beta", "5",
                                "--method", "closed"])
    assert code == 0
    header, row = out.strip().split("\n")
    assert header == "dist,method,p,are,std_error,n_samples"
    assert float(row.split(",")[3]) == pytest.approx(0.8748277, abs=1e-6)


def test_fit_matches_least_squares(capsys, toy):
    code, out, _ = run(capsys, ["fit", "--input", toy, "--response", "y", "--k", "1",
                                "--p", "2", "--tau-single", "0.5", "--lambda", "0"])
    assert code == 0
    res = json.loads(out)
    d, _ = load_csv(toy, "y")
    ls = least_squares_closed(d).minimizer
    np.testing.assert_allclose(np.r_[res["results"]["b"], res["results"]["beta"]], ls,
                               atol=1e-6)
    assert set(res) == {"command", "diagnostics", "params", "results", "seed"}


def test_fit_json_round_trip(capsys, toy):
    code, out, _ = run(capsys, ["fit", "--input", toy, "--response", "y", "--k", "3",
                                "--p", "1.5", "--lambda", "2", "--standardize"])
    assert code == 0
    r = json.loads(out)["results"]
    d, _ = load_csv(toy, "y", standardize=True)
    from clpqr.estimators import adaptive_weights
    w = adaptive_weights(np.array(r["stage1_beta"]), 2.0, d.T)
    again = objective(d, r["taus"], 1.5, np.array(r["b"]), np.array(r["beta"]), w)
    assert again == pytest.approx(r["objective"], rel=1e-12)
    assert r["support"] == [j for j, v in enumerate(r["beta"]) if v != 0]


def test_identical_commands_give_identical_bytes(capsys, toy, tmp_path):
    argv = ["oracle", "--input", toy, "--response", "y", "--k", "3", "--p", "1.5",
            "--split", "20:10:10", "--lambda-grid", "0:10:4", "--seed", "3"]
    outs = []
    for i in range(2):
        dest = tmp_path / f"o{i}.json"
        assert main(argv + ["--output", str(dest)]) == 0
        outs.append(dest.read_bytes())
    assert outs[0] == outs[1]
    res = json.loads(outs[0])["results"]
    assert set(res["test_error"]) == {"l1", "l2", "lp"}


def test_simulate_csv(capsys):
    argv = ["simulate", "--error", "e1", "--p", "2,1.5", "--k", "3", "--reps", "2",
            "--lambda-grid", "0:10:3", "--seed", "7"]
    code, out, _ = run(capsys, argv)
    assert code == 0
    lines = out.strip().split("\n")
    assert lines[0] == "error,p,k,reps,ee_mean,anc,anic,failures" and len(lines) == 3
    _, out2, _ = run(capsys, argv)
    assert out == out2


def test_nearqr_and_cov(capsys, toy):
    code, out, _ = run(capsys, ["cov", "--input", toy, "--response", "y", "--add-constant",
                                "--p", "1.05"])
    assert code == 0
    r = json.loads(out)["results"]
    s = np.array(r["sigma0"])
    assert s.shape == (4, 4) and np.allclose(s, s.T) and r["columns"][0] == "const"
    code, out, _ = run(capsys, ["nearqr", "--input", toy, "--response", "y", "--p", "1.01"])
    assert code == 0 and len(json.loads(out)["results"]["beta"]) == 3


def test_lpq(capsys, toy):
    code, out, _ = run(capsys, ["lpq", "--dist", "normal", "--tau-single", "0.5", "--p", "1.5"])
    assert code == 0 and abs(json.loads(out)["results"]["value"]) < 1e-8
    code, out, _ = run(capsys, ["lpq", "--input", toy, "--response", "y", "--p", "2"])
    d, _ = load_csv(toy, "y")
    assert json.loads(out)["results"]["value"] == pytest.approx(d.y.mean(), abs=1e-8)


def test_exit_codes(capsys, toy, tmp_path):
    code, _, err = run(capsys, ["fit", "--input", toy, "--response", "missing"])
    assert code == EXIT_DATA and json.loads(err)["error"]["code"] == EXIT_DATA
    code, _, _ = run(capsys, ["fit", "--input", toy, "--response", "y", "--lambda", "-1"])
    assert code == EXIT_USAGE
    code, _, _ = run(capsys, ["bogus"])
    assert code == EXIT_USAGE
    code, _, _ = run(capsys, ["are", "--dist", "cauchy", "--method", "mc", "--n", "1000"])
    assert code == EXIT_NUMERIC
    code, _, _ = run(capsys, ["oracle", "--input", toy, "--response", "y"])
    assert code == EXIT_DATA
