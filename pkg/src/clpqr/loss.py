"""Asymmetric power loss of L^p-quantiles and scalar L^p-quantile solvers.

The loss ``eta(s) = |tau - I(s < 0)| |s|^p`` interpolates the check loss of
quantile regression (p = 1) and the asymmetric squared loss of expectile
regression (p = 2).  ``phi`` is its first derivative and ``psi`` the second
derivative kernel used by the asymptotic variance formulas.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np
from scipy import integrate, optimize

if TYPE_CHECKING:
    from .distributions import ErrorDistribution

PSI_FLOOR = 1e-8


@dataclass(frozen=True)
class LossSpec:
    """Weight ``tau`` and power ``p`` of the asymmetric power loss."""

    tau: float
    p: float

    def __post_init__(self):
        if not 0.0 < self.tau < 1.0:
            raise ValueError(f"tau must lie in (0, 1), got {self.tau}")
        if not self.p >= 1.0:
            raise ValueError(f"p must be >= 1, got {self.p}")


@dataclass(frozen=True)
class LpQuantileResult:
    value: float
    iterations: int
    residual: float


def _weight(s, tau):
    return np.where(s < 0, 1.0 - tau, tau)


def eta(s, spec: LossSpec):
    """Loss value ``|tau - I(s<0)| |s|^p``; vectorized over ``s``."""
    s = np.asarray(s, dtype=float)
    out = _weight(s, spec.tau) * np.abs(s) ** spec.p
    return out if out.ndim else float(out)


def phi(s, spec: LossSpec):
    """First derivative of :func:`eta`.

    For p = 1 this is the subgradient selection with ``phi(0) = 0``.
    """
    s = np.asarray(s, dtype=float)
    a = np.abs(s)
    if spec.p == 1.0:
        mag = np.ones_like(a)
    else:
        mag = a ** (spec.p - 1.0)
    out = spec.p * _weight(s, spec.tau) * mag * np.sign(s)
    return out if out.ndim else float(out)


def psi(s, spec: LossSpec, floor: float = PSI_FLOOR):
    """Second-derivative kernel ``p(p-1)|tau - I(s<0)| max(|s|, floor)^(p-2)``."""
    if spec.p <= 1.0:
        raise ValueError("psi is defined for p > 1 only")
    if floor <= 0:
        raise ValueError("floor must be positive")
    s = np.asarray(s, dtype=float)
    a = np.maximum(np.abs(s), floor)
    out = spec.p * (spec.p - 1.0) * _weight(s, spec.tau) * a ** (spec.p - 2.0)
    return out if out.ndim else float(out)


def lp_quantile_sample(values, spec: LossSpec, tol: float = 1e-10,
                       floor: float = PSI_FLOOR) -> LpQuantileResult:
    """Empirical tau-th L^p-quantile: ``argmin_b sum_i eta(values_i - b)``.

    The derivative ``g(b) = -sum_i phi(values_i - b)`` is nondecreasing, so
    the root is bracketed by ``[min(values), max(values)]``.  Bisection keeps
    the bracket; a Newton step from ``psi`` is taken whenever it lands inside.
    """
    v = np.asarray(values, dtype=float).ravel()
    if v.size == 0:
        raise ValueError("values must be nonempty")
    if not np.all(np.isfinite(v)):
        raise ValueError("values must be finite")
    if spec.p <= 1.0:
        raise ValueError("lp_quantile_sample requires p > 1")

    lo, hi = float(v.min()), float(v.max())
    if lo == hi:
        return LpQuantileResult(lo, 0, 0.0)
    # normalise by the data scale so tol is relative to a unit-size problem
    scale = max(hi - lo, 1e-300)

    def grad(b):
        return -float(np.sum(phi((v - b) / scale, spec))) / v.size

    b = 0.5 * (lo + hi)
    it = 0
    for it in range(1, 400):
        g = grad(b)
        if abs(g) <= tol:
            break
        if g > 0:
            hi = b
        else:
            lo = b
        curv = float(np.sum(psi((v - b) / scale, spec, floor))) / v.size
        step = b - g * scale / curv if curv > 0 else math.nan
        if lo < step < hi:
            b = step
        else:
            b = 0.5 * (lo + hi)
        if hi - lo <= 1e-15 * max(1.0, abs(b)):
            break
    return LpQuantileResult(float(b), it, abs(grad(b)))


def _one_sided(f, b, q, direction, lo, hi):
    """Integral of |r-b|^q f(r) over r<b (direction -1) or r>b (+1)."""
    opts = dict(epsabs=1e-12, epsrel=1e-11, limit=200)
    # algebraic endpoint weight on a finite panel, plain tail beyond it
    edge = lo if direction < 0 else hi
    span = 50.0 if math.isinf(edge) else abs(edge - b)
    if span == 0.0 or (direction < 0 and b <= lo) or (direction > 0 and b >= hi):
        return 0.0
    far = b + direction * span
    if direction < 0:
        val = integrate.quad(f, far, b, weight="alg", wvar=(0.0, q), **opts)[0]
        if math.isinf(edge):
            val += integrate.quad(lambda r: (b - r) ** q * f(r), -np.inf, far, **opts)[0]
    else:
        val = integrate.quad(f, b, far, weight="alg", wvar=(q, 0.0), **opts)[0]
        if math.isinf(edge):
            val += integrate.quad(lambda r: (r - b) ** q * f(r), far, np.inf, **opts)[0]
    return val


def _partial_moments(dist: "ErrorDistribution", b: float, p: float):
    """Lower and upper partial moments E|e-b|^(p-1) over e<b and e>b."""
    lo, hi = dist.integration_bounds()
    f = dist.density
    return (_one_sided(f, b, p - 1.0, -1, lo, hi),
            _one_sided(f, b, p - 1.0, +1, lo, hi))


def lp_quantile_dist(dist: "ErrorDistribution", tau: float, p: float,
                     tol: float = 1e-10) -> LpQuantileResult:
    """Population tau-th L^p-quantile of ``dist``.

    Solves ``L(b) / (L(b) + U(b)) = tau`` where ``L`` and ``U`` are the lower
    and upper partial moments of order ``p - 1``; the ratio increases in b.
    """
    if not 0.0 < tau < 1.0:
        raise ValueError("tau must lie in (0, 1)")
    if p <= 1.0:
        raise ValueError("lp_quantile_dist requires p > 1")
    dist.check_moment(p - 1.0)
    if dist.symmetric and tau == 0.5:
        return LpQuantileResult(0.0, 0, 0.0)

    def gap(b):
        lower, upper = _partial_moments(dist, b, p)
        return (1.0 - tau) * lower - tau * upper

    # the ordinary quantile is a good centre for the bracket
    centre = float(dist.ppf(tau))
    width = max(1.0, abs(centre))
    a, c = centre - width, centre + width
    for _ in range(200):
        if gap(a) < 0 < gap(c):
            break
        a -= width
        c += width
        width *= 2.0
    else:
        raise RuntimeError("failed to bracket the L^p-quantile")
    root, info = optimize.brentq(gap, a, c, xtol=tol, rtol=4 * np.finfo(float).eps,
                                 maxiter=500, full_output=True)
    if not info.converged:
        raise RuntimeError("L^p-quantile root search did not converge")
    lower, upper = _partial_moments(dist, root, p)
    ratio = lower / (lower + upper)
    return LpQuantileResult(float(root), info.iterations, abs(ratio - tau))
