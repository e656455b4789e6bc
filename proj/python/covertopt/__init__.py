"""Covert sequential hypothesis testing and best-arm identification."""

from ._core import (
    SolverError,
    ValidationError,
    chi2,
    chi2_gaussian_mixture,
    exponent,
    f_inverse,
    fit_sqrt_scaling,
    glr_statistic,
    kl,
    kl_gaussian_mixture,
    simulate_bai,
    simulate_ht,
    stopping_threshold,
    tau_sup,
    tv,
)

__all__ = [
    "SolverError",
    "ValidationError",
    "chi2",
    "chi2_gaussian_mixture",
    "exponent",
    "f_inverse",
    "fit_sqrt_scaling",
    "glr_statistic",
    "kl",
    "kl_gaussian_mixture",
    "simulate_bai",
    "simulate_ht",
    "stopping_threshold",
    "tau_sup",
    "tv",
]

__version__ = "0.1.0"
