"""Estimation procedures built on the CCPA solver.

* ``fit_clpqr``: unpenalized composite L^p-quantile regression.
* ``fit_aclpqr``: two-stage adaptive-lasso variant with weights
  ``w_j = min((lambda / T) / |beta_j^clp|^2, w_max)``.
* ``tune_lambda``: grid search on a held-out tuning set.
* ``fit_near_qr``: single-level fit with p slightly above 1 and no intercept.
* ``estimate_sigma0``: plug-in asymptotic covariance of the near-quantile fit.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
import scipy.linalg

from .dataset import Dataset
from .loss import PSI_FLOOR, LossSpec, psi
from .solver import CompositeFit, SolverConfig, check_taus, objective
from .solver import fit as ccpa_fit

W_MAX = 1e12


@dataclass
class OracleFit:
    stage1: CompositeFit
    fit: CompositeFit
    lam: float
    support: Tuple[int, ...]


@dataclass(frozen=True)
class CovarianceEstimate:
    sigma0: np.ndarray
    psi_mean: float
    gram_inverse: np.ndarray


def derive_seed(master: int, index: int) -> np.random.SeedSequence:
    """Per-replicate seed: the SeedSequence hash of ``(master, index)``."""
    if master < 0 or index < 0:
        raise ValueError("seeds must be nonnegative")
    return np.random.SeedSequence([int(master), int(index)])


def equally_spaced_taus(K: int) -> np.ndarray:
    if K < 1:
        raise ValueError("K must be >= 1")
    return np.arange(1, K + 1) / (K + 1.0)


def fit_clpqr(data: Dataset, K: int, p: float, config: Optional[SolverConfig] = None,
              init=None) -> CompositeFit:
    return ccpa_fit(data, equally_spaced_taus(K), p, None, config, init)


def adaptive_weights(beta_clp, lam: float, T: int, w_max: float = W_MAX,
                     unpenalized: Sequence[int] = ()) -> np.ndarray:
    """``min((lam / T) / beta_j^2, w_max)``, zero on the ``unpenalized`` columns."""
    beta_clp = np.asarray(beta_clp, dtype=float)
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    if not w_max > 0:
        raise ValueError("w_max must be positive")
    if lam == 0:
        return np.zeros_like(beta_clp)
    with np.errstate(divide="ignore"):
        w = np.minimum((lam / T) / beta_clp ** 2, w_max)
    w[list(unpenalized)] = 0.0
    return w


def fit_aclpqr(data: Dataset, K: int, p: float, lam: float,
               config: Optional[SolverConfig] = None, w_max: float = W_MAX,
               stage1: Optional[CompositeFit] = None, init=None,
               unpenalized: Sequence[int] = ()) -> OracleFit:
    """Two-stage adaptive-lasso fit.

    Stage 2 starts from ``init`` (default: the same start as stage 1), so at
    ``lam = 0`` it reproduces stage 1 exactly.
    """
    if stage1 is None:
        stage1 = fit_clpqr(data, K, p, config)
    w = adaptive_weights(stage1.beta, lam, data.T, w_max, unpenalized)
    second = ccpa_fit(data, equally_spaced_taus(K), p, w, config, init)
    return OracleFit(stage1, second, float(lam), second.support)


def default_lambda_grid(T: int, n: int = 30) -> np.ndarray:
    return np.logspace(-4, 2, n) * math.sqrt(T)


def tuning_loss(fit: CompositeFit, tune: Dataset) -> float:
    """Unpenalized (1/T_tune)-scaled composite loss on held-out data."""
    return objective(tune, fit.taus, fit.p, fit.b, fit.beta)


def tune_lambda(train: Dataset, tune: Dataset, K: int, p: float,
                grid: Optional[Sequence[float]] = None,
                config: Optional[SolverConfig] = None,
                unpenalized: Sequence[int] = ()) -> Tuple[float, OracleFit]:
    """Pick lambda minimizing the held-out composite loss.

    The grid (ascending) is traversed from the largest value down, each fit
    warm-started at the previous one; ties go to the larger lambda.
    """
    grid = default_lambda_grid(train.T) if grid is None else np.asarray(grid, dtype=float)
    if grid.size == 0:
        raise ValueError("lambda grid is empty")
    if np.any(grid < 0) or np.any(np.diff(grid) < 0):
        raise ValueError("lambda grid must be nonnegative and ascending")
    stage1 = fit_clpqr(train, K, p, config)
    best: Optional[Tuple[float, OracleFit]] = None
    best_loss = math.inf
    warm = (stage1.b, stage1.beta)
    for lam in grid[::-1]:
        of = fit_aclpqr(train, K, p, float(lam), config, stage1=stage1,
                        init=None if lam == 0 else warm, unpenalized=unpenalized)
        warm = (of.fit.b, of.fit.beta)
        loss = tuning_loss(of.fit, tune)
        if loss < best_loss:
            best_loss = loss
            best = (float(lam), of)
    if best is None:
        raise FloatingPointError("tuning loss is non-finite for every lambda")
    return best


def fit_near_qr(data: Dataset, tau: float, p: float,
                config: Optional[SolverConfig] = None) -> np.ndarray:
    """Near-quantile regression coefficients.

    No intercept is added: include a constant column in ``X`` if one is
    wanted.  ``p = 1`` gives ordinary quantile regression.
    """
    if p < 1:
        raise ValueError("p must be >= 1")
    if p > 1.1:
        warnings.warn(f"near-quantile regression expects p close to 1, got {p:g}",
                      stacklevel=2)
    taus = check_taus([tau])
    return ccpa_fit(data, taus, p, None, config, intercepts=False).beta


def estimate_sigma0(data: Dataset, beta_hat, tau: float, p: float,
                    floor: float = PSI_FLOOR) -> CovarianceEstimate:
    """``tau (1 - tau) / mean(psi(resid))^2 * (X'X / T)^{-1}``."""
    beta_hat = np.asarray(beta_hat, dtype=float).reshape(-1)
    if beta_hat.shape != (data.m,):
        raise ValueError("beta_hat has the wrong length")
    spec = LossSpec(tau, p)
    resid = data.y - data.X @ beta_hat
    psi_mean = float(np.mean(psi(resid, spec, floor)))
    gram = data.X.T @ data.X / data.T
    try:
        factor = scipy.linalg.cho_factor(gram)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError("X'X / T is singular") from exc
    ginv = scipy.linalg.cho_solve(factor, np.eye(data.m))
    ginv = 0.5 * (ginv + ginv.T)
    sigma0 = tau * (1.0 - tau) / psi_mean ** 2 * ginv
    return CovarianceEstimate(sigma0, psi_mean, ginv)
