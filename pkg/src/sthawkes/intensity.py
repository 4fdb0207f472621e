"""Conditional intensity, likelihood, priors, posterior, and BIC.

The model: counts y[t, r] are Poisson with mean

    lambda[t, r] = mu + alpha * sum_{s=1..min(t, t_max)} g(s)
                              * sum_{r'} counts[t-s, r'] * w[r', r]

where g is the truncated geometric temporal kernel and w the RBF spatial
weight matrix. Rows before `warmup` enter the history sums but are not
likelihood observations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from . import backend
from .ingest import EventGrid
from .kernels import SpatialWeightMatrix, temporal_pmf, temporal_pmf_grad

PARAM_NAMES = ("mu", "alpha", "beta", "sigma")

# log prior normalizing constants: Gamma(shape 2, rate 2) and
# Inverse-Gamma(shape 5, scale 5)
_LOG4 = math.log(4.0)
_IG_CONST = 5.0 * math.log(5.0) - math.lgamma(5.0)


@dataclass(frozen=True)
class ModelParams:
    """(mu, alpha, beta, sigma) plus the fixed truncation lag t_max."""

    mu: float
    alpha: float
    beta: float
    sigma: float
    t_max: int = 3

    def __post_init__(self):
        if not (self.mu >= 0 and math.isfinite(self.mu)):
            raise ValueError(f"mu must be finite and >= 0, got {self.mu}")
        if not (self.alpha >= 0 and math.isfinite(self.alpha)):
            raise ValueError(f"alpha must be finite and >= 0, got {self.alpha}")
        if not 0.0 < self.beta <= 1.0:
            raise ValueError(f"beta must be in (0, 1], got {self.beta}")
        if not (self.sigma > 0 and math.isfinite(self.sigma)):
            raise ValueError(f"sigma must be finite and > 0, got {self.sigma}")
        if self.mu + self.alpha <= 0:
            raise ValueError("mu + alpha must be positive")
        if self.t_max < 1:
            raise ValueError(f"t_max must be >= 1, got {self.t_max}")

    def as_array(self) -> np.ndarray:
        return np.array([self.mu, self.alpha, self.beta, self.sigma])

    @classmethod
    def from_array(cls, x, t_max: int) -> "ModelParams":
        return cls(mu=float(x[0]), alpha=float(x[1]), beta=float(x[2]),
                   sigma=float(x[3]), t_max=int(t_max))

    def replace(self, **kw) -> "ModelParams":
        return replace(self, **kw)


@dataclass(frozen=True)
class FitStatistics:
    loglik: float
    n_obs: int
    k: int
    bic: float


def _check_dims(grid: EventGrid, weights: SpatialWeightMatrix) -> None:
    if weights.n_regions != grid.n_regions:
        raise ValueError(
            f"weight matrix is for {weights.n_regions} regions, grid has {grid.n_regions}"
        )


def excitation(params: ModelParams, grid: EventGrid,
               weights: SpatialWeightMatrix) -> np.ndarray:
    """The history-driven part of the intensity, before scaling by alpha."""
    _check_dims(grid, weights)
    g = temporal_pmf(params.beta, params.t_max)
    return backend.excitation_matrix(grid.counts.astype(np.float64), g, weights.w)


def intensity_surface(params: ModelParams, grid: EventGrid,
                      weights: SpatialWeightMatrix) -> np.ndarray:
    """T x R matrix of conditional means, warm-up rows included.

    History before row 0 contributes nothing, so early rows see a
    truncated lag window.
    """
    return params.mu + params.alpha * excitation(params, grid, weights)


def log_likelihood(params: ModelParams, grid: EventGrid,
                   weights: SpatialWeightMatrix) -> float:
    """Poisson log likelihood over rows >= warmup, ln(y!) included.

    Returns -inf when some cell has lambda = 0 with y > 0; never raises for
    that case so optimizers can reject gracefully.
    """
    lam = intensity_surface(params, grid, weights)
    return backend.poisson_loglik_sum(grid.counts.astype(np.float64), lam, grid.warmup)


def log_likelihood_gradient(params: ModelParams, grid: EventGrid,
                            weights: SpatialWeightMatrix) -> np.ndarray:
    """Analytic gradient (d/dmu, d/dalpha, d/dbeta, d/dsigma).

    Needs beta strictly inside (0, 1); the truncation normalizer is not
    differentiable at the boundary. The alpha component always comes from
    the excitation sum itself, so alpha = 0 is fine.
    """
    if not 0.0 < params.beta < 1.0:
        raise ValueError("gradient requires beta in (0, 1)")
    _check_dims(grid, weights)
    counts = grid.counts.astype(np.float64)
    g = temporal_pmf(params.beta, params.t_max)
    dg = temporal_pmf_grad(params.beta, params.t_max)

    E = backend.excitation_matrix(counts, g, weights.w)
    E_beta = backend.excitation_matrix(counts, dg, weights.w)
    # dw/dsigma = w * dpow / sigma^3, and the excitation sum is linear in w
    w_sig = weights.w * weights.dpow
    E_sigma = backend.excitation_matrix(counts, g, w_sig) / weights.sigma**3

    lam = params.mu + params.alpha * E
    y = counts[grid.warmup:]
    lam_o = lam[grid.warmup:]
    # d loglik / d lambda per cell; at lambda -> 0 with y = 0 the limit is -1
    with np.errstate(divide="ignore", invalid="ignore"):
        coef = np.where(lam_o > 0.0, y / np.where(lam_o > 0.0, lam_o, 1.0) - 1.0, -1.0)
    sl = slice(grid.warmup, None)
    return np.array([
        float(coef.sum()),
        float((coef * E[sl]).sum()),
        float(params.alpha * (coef * E_beta[sl]).sum()),
        float(params.alpha * (coef * E_sigma[sl]).sum()),
    ])


def log_prior(params: ModelParams) -> float:
    """Gamma(2,2) on mu and alpha, U(0,1) on beta, Inverse-Gamma(5,5) on sigma.

    Gamma is shape-rate (density 4 x e^{-2x}); Inverse-Gamma is shape-scale
    (density 5^5/Gamma(5) x^{-6} e^{-5/x}). Outside support returns -inf.
    """
    mu, alpha, beta, sigma = params.mu, params.alpha, params.beta, params.sigma
    if mu <= 0 or alpha <= 0 or not (0.0 < beta < 1.0) or sigma <= 0:
        return float("-inf")
    lp = _LOG4 + math.log(mu) - 2.0 * mu
    lp += _LOG4 + math.log(alpha) - 2.0 * alpha
    lp += _IG_CONST - 6.0 * math.log(sigma) - 5.0 / sigma
    return lp


def log_posterior(params: ModelParams, grid: EventGrid,
                  weights: SpatialWeightMatrix) -> float:
    lp = log_prior(params)
    if lp == float("-inf"):
        return lp
    ll = log_likelihood(params, grid, weights)
    return ll + lp


def bic(loglik: float, n_obs: int, k: int) -> float:
    if n_obs < 1:
        raise ValueError(f"n_obs must be >= 1, got {n_obs}")
    return k * math.log(n_obs) - 2.0 * loglik


def fit_statistics(loglik: float, grid: EventGrid, k: int = 4) -> FitStatistics:
    n_obs = grid.n_likelihood_cells()
    return FitStatistics(loglik=float(loglik), n_obs=n_obs, k=k,
                         bic=bic(loglik, n_obs, k))
