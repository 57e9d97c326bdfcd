"""Cyclic coordinate descent with proximal-gradient inner steps (CCPA).

Minimizes the penalized composite objective

    (1/T) sum_k sum_t eta_{tau_k, p}(y_t - b_k - x_t' beta) + sum_j w_j |beta_j|

over the intercepts ``b_1..b_K`` and the shared coefficients ``beta``.
Coordinates are visited in the order ``b_1..b_K, beta_1..beta_m``.  Each
visit runs a few proximal-gradient iterations

    alpha <- L_{w/S}(alpha - g / S),    L_u(v) = sign(v) (|v| - u)_+

with ``S = c1`` for intercepts and ``S = c2 ||x_j||^2 / T`` for
coefficients.  For ``p < 1.5`` the step is shrunk by growing ``S`` by the
factor ``c3`` after every inner iteration.

Near zero residuals the curvature of |s|^p is unbounded for p < 2, and the
fixed steps can then overshoot and settle into a limit cycle.  By default a
proposed step that would increase the coordinate objective is rejected and
retried with ``S`` doubled (``SolverConfig.safeguard``); accepted steps are
exactly the fixed-step iterates, so every coordinate visit is monotone.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np
from numba import njit

from .dataset import Dataset


@dataclass(frozen=True)
class SolverConfig:
    c1: float = 1.6
    c2: float = 10.0
    c3: float = 1.0 / 0.9
    inner_iters: int = 10
    inner_tol: float = 1e-8
    outer_tol: float = 1e-7
    max_cycles: int = 5000
    # "inner": S_i restarts at its base value on every coordinate visit;
    # "outer": the c3 growth of S_i carries over between cycles.
    c3_mode: str = "inner"
    # reject a proximal step that increases the coordinate objective and
    # retry with half the step; False runs the plain fixed-step rule
    safeguard: bool = True
    # for p < 1.5 the iterates settle into a small oscillation instead of
    # meeting outer_tol; stop once the best objective has improved by less
    # than stall_rtol (relative) over stall_cycles consecutive cycles
    stall_cycles: int = 30
    stall_rtol: float = 1e-9
    # p == 1 only: warm start along a decreasing sequence of p > 1, each
    # stage (and the final p = 1 run) with the longer stall window below
    homotopy: Tuple[float, ...] = (1.1, 1.01)
    homotopy_stall_cycles: int = 2000

    def __post_init__(self):
        for name in ("c1", "c2", "inner_tol", "outer_tol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not self.c3 >= 1.0:
            raise ValueError("c3 must be >= 1")
        if self.inner_iters < 1 or self.max_cycles < 1:
            raise ValueError("inner_iters and max_cycles must be >= 1")
        if self.c3_mode not in ("inner", "outer"):
            raise ValueError("c3_mode must be 'inner' or 'outer'")
        if self.stall_cycles < 1 or self.homotopy_stall_cycles < 1 or self.stall_rtol < 0:
            raise ValueError("invalid stall settings")
        if any(q <= 1.0 for q in self.homotopy):
            raise ValueError("homotopy powers must exceed 1")


@dataclass
class CompositeFit:
    b: np.ndarray
    beta: np.ndarray
    objective: float
    cycles: int
    converged: bool
    taus: np.ndarray
    p: float
    frozen: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))
    history: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def support(self) -> Tuple[int, ...]:
        return tuple(int(j) for j in np.flatnonzero(self.beta != 0.0))


def check_taus(taus) -> np.ndarray:
    taus = np.asarray(taus, dtype=float).reshape(-1)
    if taus.size == 0:
        raise ValueError("taus must be nonempty")
    if np.any(taus <= 0) or np.any(taus >= 1):
        raise ValueError("taus must lie in (0, 1)")
    if np.any(np.diff(taus) <= 0):
        raise ValueError("taus must be strictly increasing")
    return taus


def check_weights(weights, m: int) -> np.ndarray:
    if weights is None:
        return np.zeros(m)
    w = np.asarray(weights, dtype=float).reshape(-1)
    if w.shape != (m,):
        raise ValueError(f"expected {m} penalty weights, got {w.size}")
    if np.any(~np.isfinite(w)) or np.any(w < 0):
        raise ValueError("penalty weights must be finite and nonnegative")
    return w


def soft_threshold(v: float, u: float) -> float:
    """``sign(v) (|v| - u)`` when ``|v| > u``, else 0."""
    if u < 0:
        raise ValueError("threshold must be nonnegative")
    return _soft(float(v), float(u))


# --------------------------------------------------------------------------
# compiled kernels


@njit(cache=True)
def _soft(v, u):
    if v > u:
        return v - u
    if v < -u:
        return v + u
    return 0.0


@njit(cache=True)
def _phi(r, tau, p):
    if r > 0.0:
        wt = tau
    elif r < 0.0:
        wt = tau - 1.0
    else:
        return 0.0
    if p == 2.0:
        return 2.0 * wt * abs(r)
    if p == 1.0:
        return wt
    return p * wt * abs(r) ** (p - 1.0)


@njit(cache=True)
def _eta(r, tau, p):
    wt = tau if r >= 0.0 else 1.0 - tau
    if p == 2.0:
        return wt * r * r
    if p == 1.0:
        return wt * abs(r)
    return wt * abs(r) ** p


@njit(cache=True)
def _objective(X, y, taus, p, b, beta, w):
    T, m = X.shape
    total = 0.0
    for t in range(T):
        base = y[t]
        for j in range(m):
            base -= X[t, j] * beta[j]
        for k in range(taus.shape[0]):
            total += _eta(base - b[k], taus[k], p)
    pen = 0.0
    for j in range(m):
        pen += w[j] * abs(beta[j])
    return total / T + pen


@njit(cache=True)
def _grad_intercept(y, xb, bk, tau, p):
    T = y.shape[0]
    g = 0.0
    for t in range(T):
        g -= _phi(y[t] - bk - xb[t], tau, p)
    return g


@njit(cache=True)
def _grad_coef(X, j, y, xb, b, taus, p):
    T = y.shape[0]
    K = taus.shape[0]
    g = 0.0
    for t in range(T):
        base = y[t] - xb[t]
        s = 0.0
        for k in range(K):
            s += _phi(base - b[k], taus[k], p)
        g -= s * X[t, j]
    return g


@njit(cache=True)
def _term(r, tau, p):
    """Loss and derivative of one residual, sharing a single power."""
    if r > 0.0:
        wt = tau
    elif r < 0.0:
        wt = tau - 1.0
    else:
        return 0.0, 0.0
    ar = abs(r)
    if p == 2.0:
        pw = ar
    elif p == 1.0:
        pw = 1.0
    else:
        pw = ar ** (p - 1.0)
    return abs(wt) * ar * pw, p * wt * pw


@njit(cache=True)
def _eval_intercept(y, xb, a, tau, p):
    """Scaled loss of one tau block and its derivative in the intercept."""
    T = y.shape[0]
    f = 0.0
    g = 0.0
    for t in range(T):
        e, d = _term(y[t] - a - xb[t], tau, p)
        f += e
        g -= d
    return f / T, g / T


@njit(cache=True)
def _eval_coef(X, j, y, xb, b, taus, p, shift):
    """Scaled loss and derivative in beta_j, with beta_j moved by ``shift``."""
    T = y.shape[0]
    K = taus.shape[0]
    f = 0.0
    g = 0.0
    for t in range(T):
        base = y[t] - xb[t] - X[t, j] * shift
        s = 0.0
        for k in range(K):
            e, d = _term(base - b[k], taus[k], p)
            f += e
            s += d
        g -= s * X[t, j]
    return f / T, g / T


@njit(cache=True)
def _ccpa(X, y, taus, p, w, b, beta, c1, c2, c3, c3_outer, free_b, safeguard,
          inner_iters, inner_tol, outer_tol, max_cycles, stall_cycles, stall_rtol):
    T, m = X.shape
    K = taus.shape[0]
    shrink = p < 1.5
    max_backtracks = 60
    xb = np.zeros(T)
    for t in range(T):
        for j in range(m):
            xb[t] += X[t, j] * beta[j]

    base_scale = np.empty(K + m)
    frozen = np.zeros(m, dtype=np.bool_)
    for k in range(K):
        base_scale[k] = c1
    for j in range(m):
        nrm = 0.0
        for t in range(T):
            nrm += X[t, j] * X[t, j]
        base_scale[K + j] = c2 * nrm / T
        if nrm == 0.0:
            frozen[j] = True
    scale = base_scale.copy()

    history = np.empty(max_cycles + 1)
    obj = _objective(X, y, taus, p, b, beta, w)
    history[0] = obj
    best = obj
    best_b = b.copy()
    best_beta = beta.copy()
    converged = False
    cycles = 0
    anchor = best
    since = 0
    for q in range(max_cycles):
        cycles = q + 1
        max_change = 0.0
        for i in range(K + m):
            if i >= K and frozen[i - K]:
                continue
            if i < K and not free_b:
                continue
            S = scale[i] if c3_outer else base_scale[i]
            is_b = i < K
            j = i - K
            start = b[i] if is_b else beta[j]
            # a is the accepted value; xb always holds beta_j = a
            a = start
            wj = 0.0 if is_b else w[j]
            if is_b:
                f, g = _eval_intercept(y, xb, a, taus[i], p)
            else:
                f, g = _eval_coef(X, j, y, xb, b, taus, p, 0.0)
            f += wj * abs(a)
            # first proposed step: the proximal stationarity residual
            first = -1.0
            accepted = 0
            rejected = 0
            while accepted < inner_iters:
                if is_b:
                    new = a - g / S
                else:
                    new = _soft(a - g / S, wj / S)
                delta = new - a
                if first < 0.0:
                    first = abs(delta)
                if delta == 0.0:
                    break
                if is_b:
                    f_new, g_new = _eval_intercept(y, xb, new, taus[i], p)
                else:
                    f_new, g_new = _eval_coef(X, j, y, xb, b, taus, p, delta)
                f_new += wj * abs(new)
                if safeguard and not f_new <= f:
                    # the step overshot: halve it and retry
                    S *= 2.0
                    rejected += 1
                    if rejected > max_backtracks:
                        break
                    continue
                if not is_b:
                    for t in range(T):
                        xb[t] += X[t, j] * delta
                a = new
                f = f_new
                g = g_new
                accepted += 1
                if shrink:
                    S *= c3
                if abs(delta) <= inner_tol:
                    break
            if is_b:
                b[i] = a
            else:
                beta[j] = a
            if c3_outer:
                scale[i] = S
            # the net change alone can vanish while steps bounce around a kink
            change = max(abs(a - start), first)
            if change > max_change:
                max_change = change
        obj = _objective(X, y, taus, p, b, beta, w)
        history[cycles] = obj
        if obj <= best:
            best = obj
            best_b[:] = b
            best_beta[:] = beta
        if max_change <= outer_tol:
            converged = True
            break
        if best < anchor - stall_rtol * max(1.0, abs(anchor)):
            anchor = best
            since = 0
        else:
            since += 1
            if since >= stall_cycles:
                break
    return best_b, best_beta, best, cycles, converged, frozen, history[:cycles + 1]


# --------------------------------------------------------------------------
# public API


def objective(data: Dataset, taus, p: float, b, beta, weights=None) -> float:
    """Penalized, (1/T)-scaled composite L^p-quantile objective."""
    taus = check_taus(taus)
    b = np.asarray(b, dtype=float).reshape(-1)
    beta = np.asarray(beta, dtype=float).reshape(-1)
    if b.shape != taus.shape:
        raise ValueError("need one intercept per tau")
    if beta.shape != (data.m,):
        raise ValueError("beta length does not match the number of columns")
    w = check_weights(weights, data.m)
    return float(_objective(np.ascontiguousarray(data.X), data.y, taus, float(p), b, beta, w))


def coordinate_gradient(data: Dataset, taus, p: float, b, beta, i: int) -> float:
    """Derivative of the unscaled composite loss with respect to coordinate ``i``.

    Coordinates ``0..K-1`` are the intercepts, ``K..K+m-1`` the coefficients.
    """
    taus = check_taus(taus)
    K, m = taus.size, data.m
    if not 0 <= i < K + m:
        raise IndexError(f"coordinate {i} out of range for K={K}, m={m}")
    b = np.asarray(b, dtype=float)
    beta = np.asarray(beta, dtype=float)
    X = np.ascontiguousarray(data.X)
    xb = X @ beta
    if i < K:
        return float(_grad_intercept(data.y, xb, float(b[i]), taus[i], float(p)))
    return float(_grad_coef(X, i - K, data.y, xb, b, taus, float(p)))


def initial_state(data: Dataset, taus) -> Tuple[np.ndarray, np.ndarray]:
    """Intercepts at the sample tau_k-quantiles of y, coefficients at zero."""
    b = np.quantile(data.y, taus, method="inverted_cdf")
    return np.asarray(b, dtype=float), np.zeros(data.m)


def _run(X, y, taus, p, w, b0, beta0, config, stall=None, free_b=True):
    # at p = 1 the loss is piecewise linear: rejecting every kink-crossing step
    # leaves coordinate descent stuck at non-stationary corners, while the
    # plain shrinking steps keep moving, so the guard is only used for p > 1
    return _ccpa(X, y, taus, float(p), w, b0.copy(), beta0.copy(),
                 config.c1, config.c2, config.c3, config.c3_mode == "outer", free_b,
                 config.safeguard and p > 1.0,
                 config.inner_iters, config.inner_tol, config.outer_tol,
                 config.max_cycles, stall or config.stall_cycles, config.stall_rtol)


def fit(data: Dataset, taus, p: float, weights=None,
        config: Optional[SolverConfig] = None,
        init: Optional[Tuple[np.ndarray, np.ndarray]] = None,
        intercepts: bool = True) -> CompositeFit:
    """Run CCPA and return the best iterate seen (never worse than ``init``).

    With ``intercepts=False`` every ``b_k`` stays at zero and only ``beta``
    is fitted.
    """
    if not p >= 1.0:
        raise ValueError("p must be >= 1")
    config = config or SolverConfig()
    taus = check_taus(taus)
    w = check_weights(weights, data.m)
    if init is None:
        b0, beta0 = initial_state(data, taus)
        if not intercepts:
            b0 = np.zeros(taus.size)
    else:
        b0 = np.array(init[0], dtype=float).reshape(-1)
        beta0 = np.array(init[1], dtype=float).reshape(-1)
        if b0.shape != taus.shape or beta0.shape != (data.m,):
            raise ValueError("init has the wrong shape")
    X = np.ascontiguousarray(data.X)
    stall = None
    if p == 1.0 and config.homotopy and init is None:
        stall = config.homotopy_stall_cycles
        for q in sorted(config.homotopy, reverse=True):
            b0, beta0, *_ = _run(X, data.y, taus, q, w, b0, beta0, config, stall, intercepts)
    b, beta, obj, cycles, converged, frozen, hist = _run(
        X, data.y, taus, float(p), w, b0, beta0, config, stall, intercepts)
    if not np.isfinite(obj):
        raise FloatingPointError("CCPA diverged to a non-finite objective")
    return CompositeFit(b=b, beta=beta, objective=float(obj), cycles=int(cycles),
                        converged=bool(converged), taus=taus, p=float(p),
                        frozen=frozen, history=hist)
