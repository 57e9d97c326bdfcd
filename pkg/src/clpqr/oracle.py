"""Brute-force reference solvers used to check the production solver.

Everything here favours exactness over speed and only handles tiny problems.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .dataset import Dataset


@dataclass(frozen=True)
class OracleSolution:
    minimizer: np.ndarray
    objective: float
    method: str


def grid_minimize_1d(f, lo: float, hi: float, step: float) -> OracleSolution:
    """Evaluate ``f`` on ``lo, lo+step, ..., hi`` and return the best point."""
    if not lo < hi:
        raise ValueError("need lo < hi")
    if not step > 0:
        raise ValueError("step must be positive")
    n = int(math.floor((hi - lo) / step + 1e-9)) + 1
    grid = lo + step * np.arange(n)
    try:
        vals = np.asarray(f(grid), dtype=float)
        if vals.shape != grid.shape:
            raise TypeError
    except (TypeError, ValueError):
        vals = np.array([f(float(x)) for x in grid], dtype=float)
    if not np.all(np.isfinite(vals)):
        raise ValueError("objective returned non-finite values on the grid")
    i = int(np.argmin(vals))
    return OracleSolution(np.array([grid[i]]), float(vals[i]), "grid")


def least_squares_closed(data: Dataset, with_intercept: bool = True) -> OracleSolution:
    """Normal-equations least squares via a Cholesky factorization.

    With an intercept the minimizer is ``(intercept, beta...)``.
    """
    X = data.X
    if with_intercept:
        X = np.column_stack([np.ones(data.T), X])
    gram = X.T @ X
    try:
        factor = scipy.linalg.cho_factor(gram)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError("Gram matrix is singular") from exc
    coef = scipy.linalg.cho_solve(factor, X.T @ data.y)
    resid = data.y - X @ coef
    return OracleSolution(coef, float(resid @ resid), "normal_equations")


def _check_loss_sum(r, tau):
    return float(np.sum(np.where(r < 0, (tau - 1.0) * r, tau * r)))


def _lower_quantile(v, tau):
    s = np.sort(v)
    return s[max(int(math.ceil(tau * s.size)) - 1, 0)]


def composite_l1_objective(data: Dataset, taus, b, beta) -> float:
    """Unscaled composite check loss, written independently of the solver."""
    total = 0.0
    for k, tau in enumerate(taus):
        for t in range(data.T):
            r = data.y[t] - b[k] - float(np.dot(data.X[t], beta))
            total += tau * r if r >= 0 else (tau - 1.0) * r
    return total


def exact_composite_l1_small(data: Dataset, taus, max_T: int = 14,
                             max_m: int = 3) -> OracleSolution:
    """Exact minimizer of ``sum_k sum_t rho_{tau_k}(y_t - b_k - x_t' beta)``.

    Some minimizer is a vertex with K + m zero residuals, at least one per
    level.  Eliminating each ``b_k`` leaves m equations of the form
    ``(x_s - x_t)' beta = y_s - y_t``, so every candidate ``beta`` solves m
    pairwise-difference equations.  Given ``beta`` each optimal ``b_k`` is a
    sample tau_k-quantile of the residuals.  The minimizer is reported as
    ``(b_1..b_K, beta...)``; the objective is the unscaled loss.
    """
    taus = np.asarray(taus, dtype=float)
    T, m = data.T, data.m
    if T > max_T or m > max_m or taus.size > 3:
        raise ValueError("instance too large for exhaustive enumeration")
    X, y = data.X, data.y

    def profile(beta):
        r = y - X @ beta
        b = np.array([_lower_quantile(r, tau) for tau in taus])
        obj = sum(_check_loss_sum(r - bk, tau) for bk, tau in zip(b, taus))
        return obj, b

    if m == 0:
        obj, b = profile(np.zeros(0))
        return OracleSolution(b, obj, "enumeration")

    pairs = list(itertools.combinations(range(T), 2))
    D = np.array([X[s] - X[t] for s, t in pairs])
    e = np.array([y[s] - y[t] for s, t in pairs])
    best = (math.inf, None, None)
    for rows in itertools.combinations(range(len(pairs)), m):
        A = D[list(rows)]
        if abs(np.linalg.det(A)) < 1e-12:
            continue
        beta = np.linalg.solve(A, e[list(rows)])
        obj, b = profile(beta)
        if obj < best[0]:
            best = (obj, b, beta)
    if best[1] is None:
        raise ValueError("all interpolation subsets are degenerate")
    return OracleSolution(np.concatenate([best[1], best[2]]), float(best[0]), "enumeration")
