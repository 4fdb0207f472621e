"""Maximum-likelihood fitting: transforms, optimizer behavior, standard errors."""

import math

import numpy as np
import pytest

from conftest import TRUTH, recovery_regions, simulated_grid
from sthawkes.ingest import EventGrid, RegionSet, set_warmup
from sthawkes.intensity import ModelParams
from sthawkes.kernels import SpatialKernel
from sthawkes.mle import (
    OptimConfig,
    default_starts,
    fit_mle,
    from_transformed,
    hessian_std_errors,
    hessian_std_errors_from_fn,
    to_transformed,
)


class TestTransforms:
    def test_round_trip(self):
        rng = np.random.default_rng(31)
        for _ in range(50):
            p = ModelParams(mu=float(rng.uniform(0.01, 5.0)),
                            alpha=float(rng.uniform(0.01, 5.0)),
                            beta=float(rng.uniform(0.05, 0.95)),
                            sigma=float(rng.uniform(0.1, 10.0)), t_max=4)
            q = from_transformed(to_transformed(p), t_max=4)
            for name in ("mu", "alpha", "beta", "sigma"):
                assert abs(getattr(q, name) - getattr(p, name)) < 1e-12

    def test_transformed_space_is_unconstrained(self):
        # any finite theta maps into the valid domain
        rng = np.random.default_rng(32)
        for _ in range(20):
            theta = rng.normal(0.0, 3.0, size=4)
            p = from_transformed(theta, t_max=3)
            assert p.mu > 0 and p.alpha > 0 and 0 < p.beta < 1 and p.sigma > 0


class TestHessianStdErrors:
    def test_quadratic_hand_value(self):
        # ll = -sum(x^2) has -H = 2I, cov = I/2, SE = 1/sqrt(2) per coordinate
        se, ok = hessian_std_errors_from_fn(lambda x: -float(x @ x),
                                            np.array([0.3, -0.1, 0.7, 1.2]))
        assert ok
        np.testing.assert_allclose(se, [0.7071067811865476] * 4, rtol=1e-6)

    def test_flat_direction_rejected(self):
        # second coordinate carries no curvature, -H is singular
        se, ok = hessian_std_errors_from_fn(lambda x: -float(x[0] ** 2),
                                            np.array([0.5, 0.5]))
        assert se is None and not ok

    def test_boundary_point_fails_cleanly(self):
        regions = RegionSet(ids=("r",), xy=np.array([[0.0, 0.0]]))
        grid = EventGrid(counts=np.array([[1], [2], [0], [1]]),
                         start_month="2010-01", region_ids=("r",))
        point = ModelParams(mu=1.0, alpha=0.0, beta=0.5, sigma=1.0, t_max=3)
        se, ok = hessian_std_errors(point, grid, regions, SpatialKernel(sigma=1.0))
        assert se is None and not ok

    def test_model_point_interior(self):
        regions = recovery_regions()
        kernel = SpatialKernel(sigma=TRUTH.sigma)
        grid = simulated_grid(regions, kernel, TRUTH, months=60, seed=1000)
        se, ok = hessian_std_errors(TRUTH, grid, regions, kernel)
        assert ok
        assert se.shape == (4,) and np.all(se > 0) and np.all(np.isfinite(se))


class TestDefaultStarts:
    def test_five_starts_moment_matched(self):
        grid = set_warmup(EventGrid(counts=np.full((10, 2), 3, dtype=int),
                                    start_month="2010-01",
                                    region_ids=("a", "b")), 2)
        starts = default_starts(grid, t_max=3)
        assert len(starts) == 5
        assert all(s.mu == 3.0 for s in starts)
        assert len({(s.alpha, s.beta, s.sigma) for s in starts}) == 5

    def test_zero_grid_floor(self):
        grid = EventGrid(counts=np.zeros((5, 2), dtype=int),
                         start_month="2010-01", region_ids=("a", "b"))
        assert all(s.mu == 1e-4 for s in default_starts(grid, t_max=3))


class TestFitMle:
    def test_all_zero_grid(self):
        regions = RegionSet(ids=("a", "b"), xy=np.array([[0.0, 0.0], [3.0, 0.0]]))
        grid = EventGrid(counts=np.zeros((24, 2), dtype=int),
                         start_month="2010-01", region_ids=("a", "b"))
        fit = fit_mle(grid, regions, SpatialKernel(sigma=1.0))
        assert fit.params.mu <= 1e-6
        assert fit.converged

    def test_pure_background_recovery(self):
        # alpha ~ 0 data: mu lands near the empirical mean
        rng = np.random.default_rng(33)
        regions = RegionSet(ids=("a", "b", "c"),
                            xy=np.array([[0.0, 0.0], [6.0, 0.0], [0.0, 6.0]]))
        counts = rng.poisson(0.9, size=(48, 3))
        grid = set_warmup(EventGrid(counts=counts, start_month="2010-01",
                                    region_ids=regions.ids), 3)
        fit = fit_mle(grid, regions, SpatialKernel(sigma=1.0))
        assert fit.converged
        assert abs(fit.params.mu - counts[3:].mean()) < 0.25

    def test_recovery_single_replicate(self):
        regions = recovery_regions()
        kernel = SpatialKernel(sigma=TRUTH.sigma)
        grid = simulated_grid(regions, kernel, TRUTH, months=60, seed=1000)
        fit = fit_mle(grid, regions, kernel)
        assert fit.converged
        assert abs(fit.params.mu - TRUTH.mu) <= 0.25 * TRUTH.mu
        assert abs(fit.params.alpha - TRUTH.alpha) <= 0.25 * TRUTH.alpha
        assert fit.hessian_ok and fit.std_errors is not None
        assert np.all(np.isfinite(fit.std_errors))

    def test_deterministic(self):
        regions = recovery_regions()
        kernel = SpatialKernel(sigma=TRUTH.sigma)
        grid = simulated_grid(regions, kernel, TRUTH, months=36, seed=1003)
        a = fit_mle(grid, regions, kernel)
        b = fit_mle(grid, regions, kernel)
        assert a.params == b.params
        assert a.loglik == b.loglik and a.iterations == b.iterations

    def test_never_below_best_start(self):
        from sthawkes.intensity import log_likelihood
        from sthawkes.kernels import build_weight_matrix

        regions = recovery_regions()
        kernel = SpatialKernel(sigma=TRUTH.sigma)
        grid = simulated_grid(regions, kernel, TRUTH, months=24, seed=1007)
        fit = fit_mle(grid, regions, kernel)
        base = build_weight_matrix(kernel, regions)
        best_start = max(
            log_likelihood(s, grid, base.rebuilt(s.sigma))
            for s in default_starts(grid, t_max=3)
        )
        assert fit.loglik >= best_start - 1e-9

    def test_custom_starts(self):
        regions = recovery_regions()
        kernel = SpatialKernel(sigma=TRUTH.sigma)
        grid = simulated_grid(regions, kernel, TRUTH, months=24, seed=1009)
        config = OptimConfig(starts=[ModelParams(mu=0.4, alpha=0.4, beta=0.5,
                                                 sigma=1.0, t_max=3)])
        fit = fit_mle(grid, regions, kernel, config=config)
        assert math.isfinite(fit.loglik)

    def test_json_dict_shape(self):
        regions = recovery_regions()
        kernel = SpatialKernel(sigma=TRUTH.sigma)
        grid = simulated_grid(regions, kernel, TRUTH, months=24, seed=1011)
        d = fit_mle(grid, regions, kernel).to_json_dict()
        assert set(d) == {"params", "std_errors", "loglik", "bic", "n_obs",
                          "converged", "hessian_ok", "iterations"}
        assert set(d["params"]) == {"mu", "alpha", "beta", "sigma", "t_max"}
        assert d["n_obs"] == (24 - 3) * 20
