"""Penalized composite L^p-quantile regression."""

from .dataset import Dataset
from .distributions import (GED, AREResult, Cauchy, ErrorDistribution, MixtureTwoNormals,
                            MomentError, Normal, StudentT, are_clpqr_mc, are_cqr_closed,
                            are_cqr_generic, finite_k_variance_factor, limit_variance_factor,
                            lp_cdf_transform)
from .estimators import (CovarianceEstimate, OracleFit, equally_spaced_taus, estimate_sigma0,
                         fit_aclpqr, fit_clpqr, fit_near_qr, tune_lambda)
from .loss import LossSpec, LpQuantileResult, eta, lp_quantile_dist, lp_quantile_sample, phi, psi
from .solver import CompositeFit, SolverConfig, coordinate_gradient, fit, objective, soft_threshold

__version__ = "0.1.0"
