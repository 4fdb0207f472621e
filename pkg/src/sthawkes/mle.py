"""Maximum-likelihood fitting with transforms, multi-start, and SE reporting.

Optimization runs in an unconstrained space (log mu, log alpha, logit beta,
log sigma) so no proposal can leave the parameter domain. A derivative-free
simplex pass from several deterministic starts is followed by a
gradient-based polish using the analytic likelihood gradient.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit, logit

from .ingest import EventGrid, RegionSet
from .intensity import (FitStatistics, ModelParams, fit_statistics,
                        log_likelihood, log_likelihood_gradient)
from .kernels import SpatialKernel, SpatialWeightMatrix, build_weight_matrix


def to_transformed(params: ModelParams) -> np.ndarray:
    """(mu, alpha, beta, sigma) -> (ln mu, ln alpha, logit beta, ln sigma)."""
    return np.array([
        math.log(params.mu),
        math.log(params.alpha),
        float(logit(params.beta)),
        math.log(params.sigma),
    ])


def from_transformed(theta, t_max: int) -> ModelParams:
    return ModelParams(
        mu=math.exp(theta[0]),
        alpha=math.exp(theta[1]),
        beta=float(expit(theta[2])),
        sigma=math.exp(theta[3]),
        t_max=t_max,
    )


@dataclass(frozen=True)
class OptimConfig:
    maxiter_simplex: int = 2000
    xatol: float = 1e-6
    fatol: float = 1e-10
    polish: bool = True
    pgtol: float = 1e-8
    grad_tol: float = 1e-4  # converged requires transformed-space |grad| below this
    starts: Optional[Sequence[ModelParams]] = None  # overrides the default start set


@dataclass(frozen=True)
class MleFit:
    params: ModelParams
    loglik: float
    stats: FitStatistics
    std_errors: Optional[np.ndarray]  # (4,) in natural space, or None
    hessian_ok: bool
    iterations: int
    converged: bool

    def to_json_dict(self) -> dict:
        p = self.params
        se = None
        if self.std_errors is not None:
            se = {"mu": self.std_errors[0], "alpha": self.std_errors[1],
                  "beta": self.std_errors[2], "sigma": self.std_errors[3]}
        return {
            "params": {"mu": p.mu, "alpha": p.alpha, "beta": p.beta,
                       "sigma": p.sigma, "t_max": p.t_max},
            "std_errors": se,
            "loglik": self.loglik,
            "bic": self.stats.bic,
            "n_obs": self.stats.n_obs,
            "converged": self.converged,
            "hessian_ok": self.hessian_ok,
            "iterations": self.iterations,
        }


def default_starts(grid: EventGrid, t_max: int) -> list:
    """Five deterministic starts: moment-matched mu crossed with spread-out
    (alpha, beta, sigma) corners plus one all-moderate point."""
    mu0 = float(grid.counts[grid.warmup:].mean())
    mu0 = max(mu0, 1e-4)
    corners = [
        (0.1, 0.3, 0.5),
        (0.1, 0.7, 2.0),
        (0.5, 0.3, 2.0),
        (0.5, 0.7, 0.5),
        (0.3, 0.5, 1.0),
    ]
    return [ModelParams(mu=mu0, alpha=a, beta=b, sigma=s, t_max=t_max)
            for a, b, s in corners]


def fit_mle(grid: EventGrid, regions: RegionSet, kernel: SpatialKernel,
            t_max: int = 3, config: OptimConfig = OptimConfig()) -> MleFit:
    """Maximize the grid log likelihood over (mu, alpha, beta, sigma).

    Deterministic: no randomness anywhere, ties between starts resolve to
    the earlier start. The returned loglik is never below the best start's
    value.
    """
    base = build_weight_matrix(kernel, regions)

    def weights_for(sigma: float) -> SpatialWeightMatrix:
        return base.rebuilt(sigma)

    def neg_ll_t(theta: np.ndarray) -> float:
        try:
            p = from_transformed(theta, t_max)
        except (ValueError, OverflowError):
            return float("inf")
        ll = log_likelihood(p, grid, weights_for(p.sigma))
        return float("inf") if not math.isfinite(ll) else -ll

    def neg_grad_t(theta: np.ndarray) -> np.ndarray:
        try:
            p = from_transformed(theta, t_max)
        except (ValueError, OverflowError):
            return np.zeros(4)
        g = log_likelihood_gradient(p, grid, weights_for(p.sigma))
        jac = np.array([p.mu, p.alpha, p.beta * (1.0 - p.beta), p.sigma])
        return -(g * jac)

    starts = list(config.starts) if config.starts is not None else default_starts(grid, t_max)
    if not starts:
        raise ValueError("no starting points")

    best_theta = None
    best_val = float("inf")
    iterations = 0
    start_vals = []
    for p0 in starts:
        theta0 = to_transformed(p0)
        start_vals.append(neg_ll_t(theta0))
        res = minimize(
            neg_ll_t, theta0, method="Nelder-Mead",
            options={"maxiter": config.maxiter_simplex, "xatol": config.xatol,
                     "fatol": config.fatol},
        )
        iterations += int(res.nit)
        if res.fun < best_val:
            best_val = float(res.fun)
            best_theta = np.asarray(res.x)

    if best_theta is None:  # every start evaluated to +inf and stayed there
        best_theta = to_transformed(starts[0])
        best_val = start_vals[0]

    if config.polish:
        # bounds keep exp()/expit() inside the parameter domain
        res = minimize(
            neg_ll_t, best_theta, method="L-BFGS-B", jac=neg_grad_t,
            bounds=[(-30.0, 15.0)] * 4,
            options={"maxiter": 500, "ftol": 1e-14, "gtol": config.pgtol},
        )
        iterations += int(res.nit)
        if res.fun <= best_val:
            best_val = float(res.fun)
            best_theta = np.asarray(res.x)

    params = from_transformed(best_theta, t_max)
    loglik = -best_val
    # did any start end at least as well as the best starting value?
    improved = math.isfinite(loglik) and loglik >= -min(start_vals)

    grad_ok = False
    if 0.0 < params.beta < 1.0 and math.isfinite(loglik):
        gnorm = float(np.linalg.norm(neg_grad_t(best_theta)))
        grad_ok = gnorm < config.grad_tol
    converged = bool(improved and grad_ok)

    std_errors, hessian_ok = hessian_std_errors(params, grid, regions, kernel)
    stats = fit_statistics(loglik, grid, k=4)
    return MleFit(params=params, loglik=loglik, stats=stats,
                  std_errors=std_errors, hessian_ok=hessian_ok,
                  iterations=iterations, converged=converged)


# ---------------------------------------------------------------------------
# Hessian-based standard errors


def hessian_std_errors_from_fn(fn: Callable[[np.ndarray], float], x0: np.ndarray,
                               rel_step: float = 1e-4, abs_floor: float = 1e-6):
    """Central-difference Hessian of fn at x0; SEs from the negative inverse.

    fn is a log objective in natural space; it may raise ValueError or
    return a non-finite value for out-of-domain points, either of which
    makes the result (None, False). Positive definiteness of -H is checked
    with a relative eigenvalue tolerance.
    """
    x0 = np.asarray(x0, dtype=float)
    d = x0.size
    h = np.maximum(np.abs(x0) * rel_step, abs_floor)

    def ev(x) -> float:
        try:
            v = float(fn(x))
        except (ValueError, OverflowError):
            return float("nan")
        return v

    f0 = ev(x0)
    if not math.isfinite(f0):
        return None, False
    H = np.empty((d, d))
    for i in range(d):
        ei = np.zeros(d); ei[i] = h[i]
        fp, fm = ev(x0 + ei), ev(x0 - ei)
        if not (math.isfinite(fp) and math.isfinite(fm)):
            return None, False
        H[i, i] = (fp - 2.0 * f0 + fm) / h[i] ** 2
    for i in range(d):
        for j in range(i + 1, d):
            ei = np.zeros(d); ei[i] = h[i]
            ej = np.zeros(d); ej[j] = h[j]
            fpp, fpm = ev(x0 + ei + ej), ev(x0 + ei - ej)
            fmp, fmm = ev(x0 - ei + ej), ev(x0 - ei - ej)
            if not all(map(math.isfinite, (fpp, fpm, fmp, fmm))):
                return None, False
            H[i, j] = H[j, i] = (fpp - fpm - fmp + fmm) / (4.0 * h[i] * h[j])

    negH = -(H + H.T) / 2.0
    evals = np.linalg.eigvalsh(negH)
    if not (evals[-1] > 0 and evals[0] > 1e-10 * evals[-1]):
        return None, False
    cov = np.linalg.inv(negH)
    diag = np.diag(cov)
    if np.any(diag <= 0) or not np.all(np.isfinite(diag)):
        return None, False
    return np.sqrt(diag), True


def hessian_std_errors(point: ModelParams, grid: EventGrid, regions: RegionSet,
                       kernel: SpatialKernel,
                       loglik_fn: Optional[Callable[[np.ndarray], float]] = None,
                       rel_step: float = 1e-4, abs_floor: float = 1e-6):
    """Standard errors at a fitted point, in the natural parameterization.

    Boundary points (alpha = 0, beta = 1) fail the finite-difference probes
    and come back as (None, False); that state is reported, never fatal.
    loglik_fn is a test seam replacing the model log likelihood.
    """
    if loglik_fn is None:
        base = build_weight_matrix(kernel, regions)

        def loglik_fn(x: np.ndarray) -> float:
            p = ModelParams.from_array(x, point.t_max)  # raises off-domain
            return log_likelihood(p, grid, base.rebuilt(p.sigma))

    return hessian_std_errors_from_fn(loglik_fn, point.as_array(),
                                      rel_step=rel_step, abs_floor=abs_floor)
