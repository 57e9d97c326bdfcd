"""Error distributions and asymptotic relative efficiency calculators.

Families: normal, Student t, Cauchy, generalized error distribution (GED)
and the two-normal mixture ``(1-rho) N(0,1) + rho N(0, rho^6)``.

ARE values are efficiencies with respect to least squares, i.e. the ratio
``sigma^2 / V`` where ``V`` is the estimator's asymptotic variance factor.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, stats
from scipy.interpolate import PchipInterpolator
from scipy.special import gamma, gammaln, logit

from .loss import lp_quantile_dist


_SQRT2PI = math.sqrt(2.0 * math.pi)


class MomentError(ValueError):
    """A required moment of the error distribution is infinite."""


def _rng(seed):
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


class ErrorDistribution:
    """Common interface of the error families.

    Subclasses provide ``density``, ``cdf``, ``ppf``, ``sample`` and the
    ``variance`` (``math.inf`` when it does not exist).
    """

    name = "abstract"
    symmetric = True

    def density(self, x):
        raise NotImplementedError

    def cdf(self, x):
        raise NotImplementedError

    def ppf(self, q):
        raise NotImplementedError

    def sample(self, n: int, seed=None) -> np.ndarray:
        raise NotImplementedError

    @property
    def variance(self) -> float:
        raise NotImplementedError

    def max_moment(self) -> float:
        """Supremum of the orders r with E|e|^r finite."""
        return math.inf

    def check_moment(self, r: float):
        if r >= self.max_moment():
            raise MomentError(f"E|e|^{r:g} is infinite for {self!r}")

    def integration_bounds(self):
        """Finite interval carrying all but ~1e-12 of the mass, or infinities."""
        return -math.inf, math.inf

    def params(self) -> dict:
        return {}


@dataclass(frozen=True)
class Normal(ErrorDistribution):
    var: float = 1.0
    name = "normal"

    def __post_init__(self):
        if self.var <= 0:
            raise ValueError("variance must be positive")

    @property
    def _sd(self):
        return math.sqrt(self.var)

    def density(self, x):
        sd = self._sd
        return np.exp(-0.5 * (np.asarray(x) / sd) ** 2) / (sd * _SQRT2PI)

    def cdf(self, x):
        return stats.norm.cdf(x, scale=self._sd)

    def ppf(self, q):
        return stats.norm.ppf(q, scale=self._sd)

    def sample(self, n, seed=None):
        return self._sd * _rng(seed).standard_normal(n)

    @property
    def variance(self):
        return self.var

    def integration_bounds(self):
        return -8.0 * self._sd, 8.0 * self._sd

    def params(self):
        return {"variance": self.var}


@dataclass(frozen=True)
class StudentT(ErrorDistribution):
    df: float = 3.0
    name = "student_t"

    def __post_init__(self):
        if self.df <= 0:
            raise ValueError("df must be positive")

    def density(self, x):
        v = self.df
        c = math.exp(gammaln((v + 1) / 2) - gammaln(v / 2)) / math.sqrt(v * math.pi)
        return c * (1.0 + np.asarray(x) ** 2 / v) ** (-(v + 1) / 2)

    def cdf(self, x):
        return stats.t.cdf(x, self.df)

    def ppf(self, q):
        return stats.t.ppf(q, self.df)

    def sample(self, n, seed=None):
        return _rng(seed).standard_t(self.df, n)

    @property
    def variance(self):
        return self.df / (self.df - 2.0) if self.df > 2 else math.inf

    def max_moment(self):
        return self.df

    def params(self):
        return {"df": self.df}


@dataclass(frozen=True)
class Cauchy(ErrorDistribution):
    name = "cauchy"

    def density(self, x):
        return 1.0 / (math.pi * (1.0 + np.asarray(x) ** 2))

    def cdf(self, x):
        return stats.cauchy.cdf(x)

    def ppf(self, q):
        return stats.cauchy.ppf(q)

    def sample(self, n, seed=None):
        return _rng(seed).standard_cauchy(n)

    @property
    def variance(self):
        return math.inf

    def max_moment(self):
        return 1.0


@dataclass(frozen=True)
class GED(ErrorDistribution):
    """Density ``beta / (2 alpha Gamma(1/beta)) exp(-(|x|/alpha)^beta)``."""

    alpha: float = 1.0
    beta: float = 2.0
    name = "ged"

    def __post_init__(self):
        if self.alpha <= 0 or self.beta <= 0:
            raise ValueError("alpha and beta must be positive")

    @classmethod
    def from_r(cls, r: float) -> "GED":
        """Density proportional to ``exp(-|x|^r)``."""
        return cls(alpha=1.0, beta=r)

    def density(self, x):
        a, b = self.alpha, self.beta
        c = b / (2.0 * a * gamma(1.0 / b))
        return c * np.exp(-np.abs(np.asarray(x) / a) ** b)

    def cdf(self, x):
        return stats.gennorm.cdf(x, self.beta, scale=self.alpha)

    def ppf(self, q):
        return stats.gennorm.ppf(q, self.beta, scale=self.alpha)

    def sample(self, n, seed=None):
        # |X/alpha|^beta ~ Gamma(1/beta, 1)
        rng = _rng(seed)
        g = rng.standard_gamma(1.0 / self.beta, n)
        sign = np.where(rng.random(n) < 0.5, -1.0, 1.0)
        return self.alpha * sign * g ** (1.0 / self.beta)

    @property
    def variance(self):
        b = self.beta
        return self.alpha ** 2 * gamma(3.0 / b) / gamma(1.0 / b)

    def integration_bounds(self):
        # exp(-z^beta) < 1e-16 beyond z = 37^(1/beta)
        z = 37.0 ** (1.0 / self.beta)
        return -z * self.alpha, z * self.alpha

    def params(self):
        return {"alpha": self.alpha, "beta": self.beta}


@dataclass(frozen=True)
class MixtureTwoNormals(ErrorDistribution):
    """``(1 - rho) N(0, 1) + rho N(0, rho^6)``; rho = 1 is standard normal."""

    rho: float = 0.5
    name = "mixture"

    def __post_init__(self):
        if not 0.0 < self.rho <= 1.0:
            raise ValueError("rho must lie in (0, 1]")

    @property
    def _sd2(self):
        return self.rho ** 3

    def density(self, x):
        x = np.asarray(x, dtype=float)
        r = self.rho
        c = 1.0 / _SQRT2PI
        out = (1.0 - r) * c * np.exp(-0.5 * x * x) \
            + c / r ** 2 * np.exp(-0.5 * x * x / r ** 6)
        return out if out.ndim else float(out)

    def cdf(self, x):
        r = self.rho
        return (1.0 - r) * stats.norm.cdf(x) + r * stats.norm.cdf(x, scale=self._sd2)

    def ppf(self, q):
        q = np.asarray(q, dtype=float)
        out = np.empty_like(q)
        for i, qi in np.ndenumerate(q):
            from scipy.optimize import brentq
            out[i] = brentq(lambda x: self.cdf(x) - qi, -40.0, 40.0, xtol=1e-14)
        return out if out.ndim else float(out)

    def sample(self, n, seed=None):
        rng = _rng(seed)
        z = rng.standard_normal(n)
        second = rng.random(n) < self.rho
        return np.where(second, self._sd2 * z, z)

    @property
    def variance(self):
        r = self.rho
        return 1.0 - r + r ** 7

    def integration_bounds(self):
        return -9.0, 9.0

    def params(self):
        return {"rho": self.rho}


def ged_e4() -> GED:
    return GED.from_r(4.0)


# --------------------------------------------------------------------------
# ARE of composite quantile regression


@dataclass(frozen=True)
class AREResult:
    value: float
    std_error: float = 0.0
    method: str = "closed_form"
    n_samples: int = 0


def are_cqr_closed(dist: ErrorDistribution) -> AREResult:
    """Closed-form ARE of CQR for the mixture and GED families."""
    if isinstance(dist, Normal):
        dist = MixtureTwoNormals(1.0)
    if isinstance(dist, MixtureTwoNormals):
        r = dist.rho
        inner = (1 - r) ** 2 + 1 / r + 2 * math.sqrt(2) * r * (1 - r) / math.sqrt(1 + r ** 6)
        value = 3 * (1 - r + r ** 7) / math.pi * inner ** 2
    elif isinstance(dist, GED):
        b = dist.beta
        value = 3 * b ** 2 / 4 ** (1 / b) * gamma(3 / b) / gamma(1 / b) ** 3
    else:
        raise TypeError(f"no closed form for {type(dist).__name__}")
    return AREResult(float(value))


def density_l2(dist: ErrorDistribution) -> float:
    """``E f(e) = integral of f^2``."""
    lo, hi = dist.integration_bounds()
    f = dist.density
    pts = None if math.isinf(lo) else [0.0]
    val, _ = integrate.quad(lambda x: f(x) ** 2, lo, hi, points=pts,
                            epsabs=1e-13, epsrel=1e-12, limit=400)
    return val


def are_cqr_generic(dist: ErrorDistribution) -> AREResult:
    """``12 sigma^2 (E f(e))^2`` by quadrature."""
    var = dist.variance
    if not math.isfinite(var):
        raise MomentError("ARE with respect to least squares needs a finite variance")
    ef = density_l2(dist)
    return AREResult(12.0 * var * ef ** 2, 0.0, "quadrature", 0)


# --------------------------------------------------------------------------
# L^p-quantile function F^{-1}_{e,p}


def chebyshev_taus(n: int) -> np.ndarray:
    j = np.arange(1, n + 1)
    return np.sort(0.5 * (1.0 - np.cos((2 * j - 1) * np.pi / (2 * n))))


@dataclass
class LpQuantileFunction:
    """Monotone interpolant of tau -> tau-th L^p-quantile.

    Interpolation runs in logit(tau), where the tails are close to linear.
    Arguments outside the node range are solved directly.
    """

    dist: ErrorDistribution
    p: float
    taus: np.ndarray
    values: np.ndarray
    _interp: PchipInterpolator = field(init=False, repr=False)

    def __post_init__(self):
        self._interp = PchipInterpolator(logit(self.taus), self.values, extrapolate=False)

    def __call__(self, tau):
        tau = np.asarray(tau, dtype=float)
        out = np.asarray(self._interp(logit(tau)), dtype=float)
        outside = (tau < self.taus[0]) | (tau > self.taus[-1])
        if np.any(outside):
            flat = out.reshape(-1)
            for i in np.flatnonzero(outside.reshape(-1)):
                flat[i] = lp_quantile_dist(self.dist, float(tau.reshape(-1)[i]), self.p).value
        return out if out.ndim else float(out)


def lp_cdf_transform(dist: ErrorDistribution, p: float, grid_size: int = 256) -> LpQuantileFunction:
    """Tabulate the L^p-quantile function on Chebyshev nodes in (0, 1)."""
    if grid_size < 4:
        raise ValueError("grid_size must be at least 4")
    dist.check_moment(p - 1.0)
    taus = chebyshev_taus(grid_size)
    half = (grid_size + 1) // 2
    values = np.empty(grid_size)
    if dist.symmetric:
        # q(1 - tau) = -q(tau); Chebyshev nodes are symmetric about 0.5
        for i in range(half):
            values[i] = lp_quantile_dist(dist, taus[i], p).value
        values[grid_size - half:] = -values[:half][::-1]
        if grid_size % 2:
            values[half - 1] = 0.0
    else:
        for i, t in enumerate(taus):
            values[i] = lp_quantile_dist(dist, t, p).value
    if np.any(np.diff(values) <= 0):
        raise RuntimeError("tabulated L^p-quantiles are not strictly increasing")
    return LpQuantileFunction(dist, p, taus, values)


# --------------------------------------------------------------------------
# Monte-Carlo variance factors and ARE of CLpQR


MIN_MC_SAMPLES = 1000
_CHUNK = 4096


@dataclass(frozen=True)
class VarianceFactor:
    """Scalar asymptotic variance factor (the ratio multiplying C^{-1})."""

    value: float
    std_error: float
    numerator: float
    denominator: float
    n_samples: int


def _check_mc(dist: ErrorDistribution, p: float, n: int):
    if not 1.0 < p <= 2.0:
        raise ValueError("p must lie in (1, 2]")
    if n < MIN_MC_SAMPLES:
        raise ValueError(f"need at least {MIN_MC_SAMPLES} Monte-Carlo draws, got {n}")
    dist.check_moment(2.0 * (p - 1.0))


def _streams(seed, n: int):
    """Independent generators, one per chunk of ``_CHUNK`` draws."""
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    sizes = [_CHUNK] * (n // _CHUNK) + ([n % _CHUNK] if n % _CHUNK else [])
    return [(np.random.default_rng(child), size) for child, size in zip(ss.spawn(len(sizes)), sizes)]


class _Moments:
    """Accumulates sum and sum of squares with exact (fsum) reduction."""

    def __init__(self):
        self.s, self.s2, self.n = [], [], 0

    def add(self, v):
        self.s.append(math.fsum(v))
        self.s2.append(math.fsum(v * v))
        self.n += v.size

    def mean_se(self):
        mean = math.fsum(self.s) / self.n
        var = max(math.fsum(self.s2) / self.n - mean * mean, 0.0)
        return mean, math.sqrt(var / self.n)


def _scaled_psi_mean(dist: ErrorDistribution, b: float, tau: float, p: float) -> float:
    """``E psi_{tau,p}(e - b) / p``, the |s|^(p-2) singularity handled by weights."""
    from .loss import _one_sided
    lo, hi = dist.integration_bounds()
    upper = _one_sided(dist.density, b, p - 2.0, +1, lo, hi)
    lower = _one_sided(dist.density, b, p - 2.0, -1, lo, hi)
    return (p - 1.0) * (tau * upper + (1.0 - tau) * lower)


@dataclass
class _Tabulated:
    """PCHIP in logit(tau) with direct evaluation outside the nodes."""

    taus: np.ndarray
    values: np.ndarray
    direct: object

    def __post_init__(self):
        self._interp = PchipInterpolator(logit(self.taus), self.values, extrapolate=False)

    def __call__(self, tau):
        tau = np.asarray(tau, dtype=float)
        out = np.asarray(self._interp(logit(tau)), dtype=float)
        outside = (tau < self.taus[0]) | (tau > self.taus[-1])
        for i in np.flatnonzero(outside):
            out[i] = self.direct(float(tau[i]))
        return out


def limit_variance_factor(dist: ErrorDistribution, p: float, n: int = 200_000, seed=0,
                          inner: int = 64, grid_size: int = 256) -> VarianceFactor:
    """Monte-Carlo estimate of the K -> infinity variance factor
    ``N / ((p - 1) D)^2``.

    ``N = E_b E_c E_e[(U_b - I(e < e_b))(U_c - I(e < e_c)) |e - e_b|^(p-1) |e - e_c|^(p-1)]``
    uses ``n`` outer pairs ``e_b = F_p^{-1}(U_b)``, ``e_c = F_p^{-1}(U_c)``,
    each with a nested batch of ``inner`` independent error draws.

    ``(p - 1) D = E_a (p - 1) E_e[|U_a - I(e < e_a)| |e - e_a|^(p-2)]`` uses
    ``n`` outer draws of ``U_a``; its inner expectation is computed by
    quadrature, since the ``|s|^(p-2)`` integrand has infinite variance for
    p <= 1.5.
    """
    _check_mc(dist, p, n)
    if inner < 1:
        raise ValueError("inner batch must be >= 1")
    Q = lp_cdf_transform(dist, p, grid_size)
    h_nodes = np.array([_scaled_psi_mean(dist, q, t, p) for t, q in zip(Q.taus, Q.values)])
    H = _Tabulated(Q.taus, h_nodes,
                   lambda t: _scaled_psi_mean(dist, Q(t), t, p))

    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    seed_num, seed_den = ss.spawn(2)
    num = _Moments()
    for rng, size in _streams(seed_num, n):
        ub = rng.random(size)
        uc = rng.random(size)
        e = dist.sample(size * inner, rng).reshape(size, inner)
        qb = np.asarray(Q(ub))[:, None]
        qc = np.asarray(Q(uc))[:, None]
        gb = (ub[:, None] - (e < qb)) * np.abs(e - qb) ** (p - 1.0)
        gc = (uc[:, None] - (e < qc)) * np.abs(e - qc) ** (p - 1.0)
        num.add(np.mean(gb * gc, axis=1))
    den = _Moments()
    for rng, size in _streams(seed_den, n):
        den.add(H(rng.random(size)))
    N, se_n = num.mean_se()
    D, se_d = den.mean_se()
    value = N / D ** 2
    rel = math.sqrt((se_n / N) ** 2 + (2.0 * se_d / D) ** 2)
    return VarianceFactor(value, abs(value) * rel, N, D, n)


def are_clpqr_mc(dist: ErrorDistribution, p: float, n: int = 200_000, seed=0,
                 inner: int = 64, grid_size: int = 256) -> AREResult:
    """ARE of CLpQR with respect to LS: ``sigma^2 / limit_variance_factor``."""
    var = dist.variance
    if not math.isfinite(var):
        raise MomentError("ARE with respect to least squares needs a finite variance")
    v = limit_variance_factor(dist, p, n, seed, inner, grid_size)
    value = var / v.value
    return AREResult(value, value * v.std_error / v.value, "monte_carlo", n)


def finite_k_variance_factor(dist: ErrorDistribution, p: float, K: int, n: int = 200_000,
                             seed=0, return_result: bool = False):
    """Scalar fraction of the K-level asymptotic covariance, tau_k = k/(K+1).

    The numerator ``E[(sum_k phi_k(e - b_k))^2]`` is a sample mean over ``n``
    error draws; each ``E psi_k`` in the denominator is computed by
    quadrature.
    """
    from .loss import LossSpec, lp_quantile_dist as _lpq, phi as _phi
    _check_mc(dist, p, n)
    if K < 1:
        raise ValueError("K must be >= 1")
    taus = np.arange(1, K + 1) / (K + 1.0)
    b = np.array([_lpq(dist, t, p).value for t in taus])
    den = p * math.fsum(_scaled_psi_mean(dist, bk, t, p) for bk, t in zip(b, taus))
    num = _Moments()
    for rng, size in _streams(seed, n):
        e = dist.sample(size, rng)
        s = np.zeros(size)
        for bk, t in zip(b, taus):
            s += _phi(e - bk, LossSpec(t, p))
        num.add(s * s)
    N, se = num.mean_se()
    value = N / den ** 2
    if return_result:
        return VarianceFactor(value, se / den ** 2, N, den, n)
    return value
