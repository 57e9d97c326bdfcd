"""Command-line interface.

Subcommands: fit, oracle, nearqr, cov, simulate, are, lpq.  Fits and
scalar queries emit a JSON object ``{command, diagnostics, params, results,
seed}``; sweeps (simulate, are) emit CSV.  Floats are written with 17
significant digits and JSON keys are sorted, so identical invocations give
byte-identical output.

Exit codes: 0 ok, 2 usage, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import io
import json
import math
import sys
from typing import List, Optional, Sequence

import numpy as np

from . import distributions as dists
from .dataset import Dataset
from .estimators import (default_lambda_grid, equally_spaced_taus, estimate_sigma0,
                         fit_near_qr, tune_lambda)
from .loss import LossSpec, lp_quantile_dist, lp_quantile_sample
from .preprocess import DataError, load_csv
from .simulation import ERROR_PRESETS, REPLICATION_CONFIG, DGPConfig, run_replications
from .solver import SolverConfig
from .solver import fit as ccpa_fit

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


class UsageError(ValueError):
    pass


# --------------------------------------------------------------------------
# output


def _fmt_float(x: float) -> str:
    if not math.isfinite(x):
        return "null"
    s = format(x, ".17g")
    return s if any(c in s for c in ".en") else s + ".0"


def dumps(obj) -> str:
    """Deterministic JSON: sorted keys, floats at 17 significant digits."""
    if isinstance(obj, dict):
        items = sorted(obj.items())
        return "{" + ", ".join(json.dumps(str(k)) + ": " + dumps(v) for k, v in items) + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        return "[" + ", ".join(dumps(v) for v in obj) + "]"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return _fmt_float(float(obj))
    if obj is None:
        return "null"
    return json.dumps(str(obj))


def _csv_cell(v) -> str:
    if isinstance(v, (float, np.floating)):
        return "" if math.isnan(v) else format(float(v), ".17g")
    return str(v)


def to_csv(header: Sequence[str], rows: Sequence[Sequence]) -> str:
    buf = io.StringIO()
    buf.write(",".join(header) + "\n")
    for row in rows:
        buf.write(",".join(_csv_cell(v) for v in row) + "\n")
    return buf.getvalue()


def _emit(text: str, path: Optional[str]):
    if path:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _envelope(command, params, results, diagnostics, seed) -> str:
    return dumps({"command": command, "params": params, "results": results,
                  "diagnostics": diagnostics, "seed": seed}) + "\n"


# --------------------------------------------------------------------------
# argument helpers


def _split_names(s: Optional[str]) -> List[str]:
    return [t.strip() for t in s.split(",") if t.strip()] if s else []


def _float_list(s: str) -> List[float]:
    try:
        return [float(t) for t in s.split(",") if t.strip()]
    except ValueError:
        raise UsageError(f"cannot parse number list {s!r}") from None


def parse_lambda_grid(spec: Optional[str], T: int) -> np.ndarray:
    """``lo:hi:n`` gives n log-spaced values (lo = 0 allowed as an extra point)."""
    if spec is None:
        return default_lambda_grid(T)
    parts = spec.split(":")
    try:
        lo, hi, n = float(parts[0]), float(parts[1]), int(parts[2])
    except (IndexError, ValueError):
        raise UsageError("--lambda-grid expects lo:hi:n") from None
    if len(parts) != 3 or n < 1 or lo < 0 or hi < lo:
        raise UsageError("--lambda-grid expects 0 <= lo <= hi and n >= 1")
    if n == 1:
        return np.array([lo])
    if lo == 0:
        if hi == 0:
            return np.zeros(1)
        return np.concatenate([[0.0], np.logspace(math.log10(hi) - 6, math.log10(hi), n - 1)])
    return np.logspace(math.log10(lo), math.log10(hi), n)


def parse_split(spec: str) -> tuple:
    try:
        parts = tuple(int(t) for t in spec.split(":"))
    except ValueError:
        raise UsageError("--split expects a:b:c") from None
    if len(parts) != 3 or min(parts) < 1:
        raise UsageError("--split expects three positive sizes a:b:c")
    return parts


def parse_error(spec: str) -> dists.ErrorDistribution:
    """``e1``..``e4`` or ``normal:VAR``, ``t:DF``, ``cauchy``, ``ged:ALPHA:BETA``,
    ``mixture:RHO``."""
    key = spec.strip().lower()
    if key in ERROR_PRESETS:
        return ERROR_PRESETS[key]()
    name, *args = key.split(":")
    try:
        vals = [float(a) for a in args]
        if name == "normal":
            return dists.Normal(*vals)
        if name in ("t", "student_t"):
            return dists.StudentT(*vals)
        if name == "cauchy" and not vals:
            return dists.Cauchy()
        if name == "ged":
            return dists.GED(*vals)
        if name == "mixture":
            return dists.MixtureTwoNormals(*vals)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad error spec {spec!r}: {exc}") from None
    raise UsageError(f"unknown error spec {spec!r}")


def dist_from_args(a) -> dists.ErrorDistribution:
    name = a.dist
    if name == "normal":
        return dists.Normal(a.var)
    if name == "t":
        return dists.StudentT(a.df)
    if name == "cauchy":
        return dists.Cauchy()
    if name == "ged":
        return dists.GED(a.alpha, a.beta)
    if name == "mixture":
        return dists.MixtureTwoNormals(a.rho)
    raise UsageError(f"unknown distribution {name!r}")


def solver_config(a, base: Optional[SolverConfig] = None) -> SolverConfig:
    """Solver flags applied on top of ``base`` (default: the solver defaults)."""
    base = base or SolverConfig()
    changes = dict(c1=a.c1, c2=a.c2, c3=a.c3, c3_mode=a.c3_mode,
                   max_cycles=a.max_cycles, outer_tol=a.outer_tol)
    if a.stall_cycles is not None:
        changes["stall_cycles"] = a.stall_cycles
    if a.stall_rtol is not None:
        changes["stall_rtol"] = a.stall_rtol
    return dataclasses.replace(base, **changes)


def _load(a):
    data, report = load_csv(a.input, a.response, standardize=a.standardize,
                            add_squares=a.add_squares,
                            exclude_cols=_split_names(a.exclude_cols),
                            restandardize_squares=not a.no_restandardize_squares)
    return data, report


def _column_indices(data: Dataset, names: Sequence[str]) -> List[int]:
    cols = list(data.column_names or [])
    out = []
    for n in names:
        if n not in cols:
            raise DataError(f"column {n!r} not found among predictors")
        out.append(cols.index(n))
    return out


def _taus(a) -> np.ndarray:
    if a.tau_single is not None:
        return np.array([a.tau_single])
    return equally_spaced_taus(a.k)


def _fit_results(fit, data: Dataset) -> dict:
    return {"b": fit.b, "beta": fit.beta, "columns": list(data.column_names or []),
            "objective": fit.objective, "support": list(fit.support), "taus": fit.taus}


def _fit_diag(fit, data: Dataset) -> dict:
    cols = list(data.column_names or [])
    frozen = [cols[j] if cols else int(j) for j in np.flatnonzero(fit.frozen)]
    return {"converged": fit.converged, "cycles": fit.cycles, "frozen_columns": frozen}


def _report_dict(report) -> dict:
    return {"constant_columns": report.constant_columns, "excluded": report.excluded,
            "means": report.means, "scales": report.scales}


def _common_params(a, keys) -> dict:
    return {k: getattr(a, k) for k in keys}


DATA_KEYS = ["input", "response", "standardize", "add_squares", "exclude_cols"]
SOLVER_KEYS = ["c1", "c2", "c3", "c3_mode", "max_cycles", "outer_tol", "stall_cycles",
               "stall_rtol"]


# --------------------------------------------------------------------------
# subcommands


def cmd_fit(a) -> str:
    data, report = _load(a)
    cfg = solver_config(a)
    taus = _taus(a)
    if a.lam < 0:
        raise UsageError("--lambda must be nonnegative")
    stage1 = ccpa_fit(data, taus, a.p, None, cfg)
    results = _fit_results(stage1, data)
    diag = _fit_diag(stage1, data)
    if a.lam > 0:
        from .estimators import adaptive_weights
        w = adaptive_weights(stage1.beta, a.lam, data.T,
                             unpenalized=_column_indices(data, _split_names(a.unpenalized_cols)))
        second = ccpa_fit(data, taus, a.p, w, cfg)
        results = _fit_results(second, data)
        results["stage1_beta"] = stage1.beta
        diag = _fit_diag(second, data)
        diag["stage1_objective"] = stage1.objective
    results["lambda"] = a.lam
    diag["preprocessing"] = _report_dict(report)
    params = _common_params(a, DATA_KEYS + SOLVER_KEYS + ["p", "k", "tau_single"])
    params["lambda"] = a.lam
    params["unpenalized_cols"] = a.unpenalized_cols
    return _envelope("fit", params, results, diag, a.seed)


def test_errors(fit, data: Dataset, metric: str, p: float) -> float:
    """Mean ``|y - yhat|^q`` with ``yhat = mean_k b_k + x' beta`` and q = p, 1 or 2."""
    q = {"lp": p, "l1": 1.0, "l2": 2.0}[metric]
    pred = float(np.mean(fit.b)) + data.X @ fit.beta
    return float(np.mean(np.abs(data.y - pred) ** q))


def cmd_oracle(a) -> str:
    data, report = _load(a)
    cfg = solver_config(a)
    n_train, n_tune, n_test = parse_split(a.split)
    if n_train + n_tune + n_test > data.T:
        raise DataError(f"split {a.split} needs {n_train + n_tune + n_test} rows, "
                        f"data has {data.T}")
    perm = np.random.default_rng(a.seed).permutation(data.T)
    train = data.subset(perm[:n_train])
    tune = data.subset(perm[n_train:n_train + n_tune])
    test = data.subset(perm[n_train + n_tune:n_train + n_tune + n_test])
    grid = parse_lambda_grid(a.lambda_grid, train.T)
    unpen = _column_indices(data, _split_names(a.unpenalized_cols))
    lam, of = tune_lambda(train, tune, a.k, a.p, grid, cfg, unpenalized=unpen)
    results = _fit_results(of.fit, data)
    results["lambda"] = lam
    results["n_zero"] = int(np.sum(of.fit.beta == 0))
    results["test_error"] = {m: test_errors(of.fit, test, m, a.p) for m in ("l1", "l2", "lp")}
    results["test_metric"] = a.test_metric
    results["test_value"] = results["test_error"][a.test_metric]
    diag = _fit_diag(of.fit, data)
    diag["lambda_grid"] = grid
    diag["stage1_objective"] = of.stage1.objective
    diag["preprocessing"] = _report_dict(report)
    params = _common_params(a, DATA_KEYS + SOLVER_KEYS + ["p", "k", "split", "test_metric",
                                                          "lambda_grid", "unpenalized_cols"])
    return _envelope("oracle", params, results, diag, a.seed)


def _nearqr_data(a):
    data, report = _load(a)
    if a.add_constant:
        names = ["const"] + list(data.column_names or [])
        data = Dataset(np.column_stack([np.ones(data.T), data.X]), data.y, names)
    return data, report


def cmd_nearqr(a) -> str:
    data, report = _nearqr_data(a)
    beta = fit_near_qr(data, a.tau_single, a.p, solver_config(a))
    results = {"beta": beta, "columns": list(data.column_names or [])}
    params = _common_params(a, DATA_KEYS + SOLVER_KEYS + ["p", "tau_single", "add_constant"])
    return _envelope("nearqr", params, results, {"preprocessing": _report_dict(report)}, a.seed)


def cmd_cov(a) -> str:
    data, report = _nearqr_data(a)
    beta = fit_near_qr(data, a.tau_single, a.p, solver_config(a))
    est = estimate_sigma0(data, beta, a.tau_single, a.p, a.floor)
    results = {"beta": beta, "columns": list(data.column_names or []),
               "sigma0": est.sigma0, "psi_mean": est.psi_mean,
               "std_errors": np.sqrt(np.diag(est.sigma0) / data.T)}
    params = _common_params(a, DATA_KEYS + SOLVER_KEYS + ["p", "tau_single", "add_constant",
                                                          "floor"])
    return _envelope("cov", params, results, {"preprocessing": _report_dict(report)}, a.seed)


def cmd_simulate(a) -> str:
    error = parse_error(a.error)
    cfg = solver_config(a, REPLICATION_CONFIG)
    dgp = DGPConfig(error=error, T_train=a.t_train, T_tune=a.t_tune)
    grid = parse_lambda_grid(a.lambda_grid, dgp.T_train)
    rows = []
    for p in _float_list(a.p_list):
        s = run_replications(dgp, p, a.k, grid, a.reps, a.seed, cfg)
        rows.append([a.error, p, a.k, a.reps, s.ee_mean, s.anc, s.anic, s.failures])
    return to_csv(["error", "p", "k", "reps", "ee_mean", "anc", "anic", "failures"], rows)


def cmd_are(a) -> str:
    dist = dist_from_args(a)
    rows = []
    if a.method == "closed":
        r = dists.are_cqr_closed(dist)
        rows.append([a.dist, "closed_form", "", r.value, r.std_error, r.n_samples])
    elif a.method == "quad":
        r = dists.are_cqr_generic(dist)
        rows.append([a.dist, "quadrature", "", r.value, r.std_error, r.n_samples])
    else:
        for i, p in enumerate(_float_list(a.p_list)):
            r = dists.are_clpqr_mc(dist, p, a.n, np.random.SeedSequence([a.seed, i]))
            rows.append([a.dist, "monte_carlo", p, r.value, r.std_error, r.n_samples])
    return to_csv(["dist", "method", "p", "are", "std_error", "n_samples"], rows)


def cmd_lpq(a) -> str:
    if a.input:
        from .preprocess import read_csv
        header, values = read_csv(a.input)
        if a.response not in header:
            raise DataError(f"column {a.response!r} not found")
        v = values[:, header.index(a.response)]
        r = lp_quantile_sample(v, LossSpec(a.tau_single, a.p))
        params = {"input": a.input, "response": a.response}
    else:
        r = lp_quantile_dist(dist_from_args(a), a.tau_single, a.p)
        params = {"dist": a.dist}
    params.update({"p": a.p, "tau_single": a.tau_single})
    results = {"value": r.value}
    diag = {"iterations": r.iterations, "residual": r.residual}
    return _envelope("lpq", params, results, diag, a.seed)


COMMANDS = {"fit": cmd_fit, "oracle": cmd_oracle, "nearqr": cmd_nearqr, "cov": cmd_cov,
            "simulate": cmd_simulate, "are": cmd_are, "lpq": cmd_lpq}


# --------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--output", help="write results here instead of stdout")
    common.add_argument("--seed", type=int, default=0)

    solver = argparse.ArgumentParser(add_help=False)
    solver.add_argument("--c1", type=float, default=1.6)
    solver.add_argument("--c2", type=float, default=10.0)
    solver.add_argument("--c3", type=float, default=1.0 / 0.9)
    solver.add_argument("--c3-mode", choices=("inner", "outer"), default="inner")
    solver.add_argument("--max-cycles", type=int, default=5000)
    solver.add_argument("--outer-tol", type=float, default=1e-7)
    solver.add_argument("--stall-cycles", type=int,
                        help="stop after this many cycles without progress")
    solver.add_argument("--stall-rtol", type=float,
                        help="relative objective progress counted as no progress")

    data = argparse.ArgumentParser(add_help=False)
    data.add_argument("--input", required=True)
    data.add_argument("--response", required=True)
    data.add_argument("--standardize", action="store_true")
    data.add_argument("--add-squares", action="store_true")
    data.add_argument("--exclude-cols", help="comma-separated columns left unstandardized")
    data.add_argument("--no-restandardize-squares", action="store_true")

    dist = argparse.ArgumentParser(add_help=False)
    dist.add_argument("--dist", choices=("normal", "t", "cauchy", "ged", "mixture"),
                      default="normal")
    dist.add_argument("--var", type=float, default=1.0)
    dist.add_argument("--df", type=float, default=3.0)
    dist.add_argument("--alpha", type=float, default=1.0)
    dist.add_argument("--beta", type=float, default=2.0)
    dist.add_argument("--rho", type=float, default=0.5)

    parser = argparse.ArgumentParser(prog="clpqr", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    f = sub.add_parser("fit", parents=[common, solver, data], help="CLpQR fit")
    f.add_argument("--p", type=float, default=2.0)
    f.add_argument("--k", type=int, default=19)
    f.add_argument("--tau-single", type=float, help="fit one level tau instead of K levels")
    f.add_argument("--lambda", dest="lam", type=float, default=0.0)
    f.add_argument("--unpenalized-cols")

    o = sub.add_parser("oracle", parents=[common, solver, data],
                       help="adaptive-lasso fit with lambda tuned on a split")
    o.add_argument("--p", type=float, default=2.0)
    o.add_argument("--k", type=int, default=19)
    o.add_argument("--lambda-grid", help="lo:hi:n log-spaced (default 30 points in "
                                         "[1e-4, 1e2] * sqrt(T_train))")
    o.add_argument("--split", default="200:150:156", help="train:tune:test row counts")
    o.add_argument("--test-metric", choices=("lp", "l1", "l2"), default="lp")
    o.add_argument("--unpenalized-cols")

    for name, helptext in (("nearqr", "near-quantile regression"),
                           ("cov", "near-quantile fit with asymptotic covariance")):
        n = sub.add_parser(name, parents=[common, solver, data], help=helptext)
        n.add_argument("--p", type=float, default=1.01)
        n.add_argument("--tau-single", type=float, default=0.5)
        n.add_argument("--add-constant", action="store_true",
                       help="prepend a column of ones (no intercept is added otherwise)")
        if name == "cov":
            n.add_argument("--floor", type=float, default=1e-8)

    s = sub.add_parser("simulate", parents=[common, solver], help="replicated experiment")
    s.add_argument("--error", default="e1")
    s.add_argument("--p", dest="p_list", default="2", help="comma-separated p values")
    s.add_argument("--k", type=int, default=19)
    s.add_argument("--reps", type=int, default=100)
    s.add_argument("--lambda-grid")
    s.add_argument("--t-train", type=int, default=100)
    s.add_argument("--t-tune", type=int, default=100)

    r = sub.add_parser("are", parents=[common, dist], help="asymptotic relative efficiency")
    r.add_argument("--method", choices=("closed", "quad", "mc"), default="closed")
    r.add_argument("--p", dest="p_list", default="1.5", help="comma-separated p values (mc)")
    r.add_argument("--n", type=int, default=200_000)

    q = sub.add_parser("lpq", parents=[common, dist], help="L^p-quantile")
    q.add_argument("--p", type=float, default=2.0)
    q.add_argument("--tau-single", type=float, default=0.5)
    q.add_argument("--input", help="CSV file; uses the sample in --response")
    q.add_argument("--response")
    return parser


def _fail(code: int, exc: BaseException) -> int:
    sys.stderr.write(dumps({"error": {"code": code, "type": type(exc).__name__,
                                      "message": str(exc)}}) + "\n")
    return code


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        a = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        text = COMMANDS[a.command](a)
    except DataError as exc:
        return _fail(EXIT_DATA, exc)
    except (UsageError, TypeError) as exc:
        return _fail(EXIT_USAGE, exc)
    except (dists.MomentError, ArithmeticError, np.linalg.LinAlgError, RuntimeError) as exc:
        return _fail(EXIT_NUMERIC, exc)
    except ValueError as exc:
        return _fail(EXIT_USAGE, exc)
    _emit(text, a.output)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
