"""Sampler machinery: adaptive random walk, diagnostics, serialization."""

import math

import numpy as np
import pytest
from scipy.special import gammaln

from conftest import TRUTH, recovery_regions, simulated_grid
from sthawkes.intensity import ModelParams
from sthawkes.kernels import SpatialKernel
from sthawkes.mcmc import (
    McmcConfig,
    PosteriorChains,
    adaptive_rwm,
    effective_sample_size,
    read_chains,
    sample_posterior,
    split_rhat,
    summarize,
    write_chains,
)


class TestSplitRhat:
    def test_well_mixed_near_one(self):
        rng = np.random.default_rng(41)
        values = rng.standard_normal((4, 2000))
        assert abs(split_rhat(values) - 1.0) < 0.01

    def test_disjoint_chains_flagged(self):
        rng = np.random.default_rng(42)
        values = rng.standard_normal((2, 1000))
        values[1] += 10.0
        assert split_rhat(values) > 1.5

    def test_constant_input_nan(self):
        assert math.isnan(split_rhat(np.ones((2, 100))))

    def test_shape_requirements(self):
        with pytest.raises(ValueError):
            split_rhat(np.zeros((1, 100)))
        with pytest.raises(ValueError):
            split_rhat(np.zeros((2, 3)))


class TestEffectiveSampleSize:
    def test_independent_draws(self):
        rng = np.random.default_rng(43)
        values = rng.standard_normal((4, 5000))
        n = values.size
        assert abs(effective_sample_size(values) - n) < 0.2 * n

    def test_autocorrelated_draws(self):
        # AR(1) with phi = 0.9 has ESS ~ N * (1 - phi) / (1 + phi) = N / 19
        rng = np.random.default_rng(44)
        phi, n = 0.9, 20000
        x = np.empty(n)
        x[0] = rng.standard_normal()
        for i in range(1, n):
            x[i] = phi * x[i - 1] + math.sqrt(1 - phi * phi) * rng.standard_normal()
        ess = effective_sample_size(x)
        assert n / 19 / 2 < ess < n / 19 * 2

    def test_constant_zero(self):
        assert effective_sample_size(np.ones(100)) == 0.0

    def test_too_short(self):
        with pytest.raises(ValueError):
            effective_sample_size(np.array([1.0, 2.0, 3.0]))

    def test_capped_at_sample_count(self):
        rng = np.random.default_rng(45)
        values = rng.standard_normal((2, 200))
        assert effective_sample_size(values) <= values.size


class TestAdaptiveRwm:
    def test_standard_normal_target(self):
        def logpdf(x):
            return -0.5 * float(x @ x)

        rng = np.random.default_rng(46)
        samples, rate = adaptive_rwm(logpdf, np.array([3.0, -3.0]),
                                     draws=20000, warmup=2000, rng=rng)
        assert samples.shape == (20000, 2)
        assert 0.1 < rate < 0.5
        np.testing.assert_allclose(samples.mean(axis=0), [0.0, 0.0], atol=0.1)
        np.testing.assert_allclose(samples.std(axis=0), [1.0, 1.0], atol=0.1)

    def test_correlated_target_adapts_shape(self):
        # strongly correlated Gaussian: a spherical proposal mixes poorly,
        # the adapted proposal should keep acceptance near target
        cov = np.array([[1.0, 0.97], [0.97, 1.0]])
        prec = np.linalg.inv(cov)

        def logpdf(x):
            return -0.5 * float(x @ prec @ x)

        rng = np.random.default_rng(47)
        samples, rate = adaptive_rwm(logpdf, np.zeros(2), draws=20000,
                                     warmup=4000, rng=rng)
        assert 0.1 < rate < 0.45
        got = np.corrcoef(samples.T)[0, 1]
        assert abs(got - 0.97) < 0.03

    def test_thinning(self):
        def logpdf(x):
            return -0.5 * float(x @ x)

        rng = np.random.default_rng(48)
        samples, _ = adaptive_rwm(logpdf, np.zeros(1), draws=500, warmup=500,
                                  rng=rng, thin=4)
        assert samples.shape == (500, 1)

    def test_deterministic(self):
        def logpdf(x):
            return -0.5 * float(x @ x)

        runs = []
        for _ in range(2):
            rng = np.random.default_rng(49)
            samples, rate = adaptive_rwm(logpdf, np.zeros(2), draws=200,
                                         warmup=200, rng=rng)
            runs.append((samples.copy(), rate))
        np.testing.assert_array_equal(runs[0][0], runs[1][0])
        assert runs[0][1] == runs[1][1]

    def test_nonfinite_init_rejected(self):
        with pytest.raises(ValueError):
            adaptive_rwm(lambda x: float("-inf"), np.zeros(2), draws=10,
                         warmup=10, rng=np.random.default_rng(50))

    def test_jump_leg_crosses_separated_modes(self):
        # two unit-sd Gaussian modes at +/-8: far enough apart that the
        # adapted random walk never crosses, while the anchored jump leg does
        def logpdf(x):
            v = float(x[0])
            return float(np.logaddexp(-0.5 * (v - 8.0) ** 2,
                                      -0.5 * (v + 8.0) ** 2))

        walk, _ = adaptive_rwm(logpdf, np.array([8.0]), draws=4000, warmup=500,
                               rng=np.random.default_rng(51))
        assert (walk > 0).all() or (walk < 0).all()

        jumpy, _ = adaptive_rwm(logpdf, np.array([8.0]), draws=4000, warmup=500,
                                rng=np.random.default_rng(51),
                                jump_prob=0.1, jump_sd=8.0)
        assert (jumpy > 4).any() and (jumpy < -4).any()


class TestConjugateSeam:
    def test_gamma_poisson_posterior(self):
        # Poisson likelihood with Gamma(2, 2) prior in log space; the exact
        # posterior is Gamma(2 + sum y, 2 + n)
        rng = np.random.default_rng(123)
        y = rng.poisson(0.7, size=200)
        s, n = int(y.sum()), y.size

        def target(theta):
            t = float(theta[0])
            return (s + 2.0) * t - (n + 2.0) * math.exp(t)

        chains = []
        for c in range(4):
            draws, _ = adaptive_rwm(target, np.array([0.0]), draws=5000,
                                    warmup=1000,
                                    rng=np.random.default_rng([52, c]))
            chains.append(np.exp(draws[:, 0]))
        pooled = np.concatenate(chains)
        exact_mean = (2.0 + s) / (2.0 + n)
        ess = effective_sample_size(np.stack(chains))
        mcse = pooled.std(ddof=1) / math.sqrt(ess)
        assert abs(pooled.mean() - exact_mean) < 2.0 * mcse


def quick_chains(seed=60, draws=50, chains=2):
    rng = np.random.default_rng(seed)
    samples = np.empty((chains, draws, 4))
    samples[:, :, 0] = rng.gamma(2.0, 0.5, (chains, draws))
    samples[:, :, 1] = rng.gamma(2.0, 0.5, (chains, draws))
    samples[:, :, 2] = rng.uniform(0.1, 0.9, (chains, draws))
    samples[:, :, 3] = rng.gamma(5.0, 0.3, (chains, draws))
    if chains >= 2:
        rhat = np.array([split_rhat(samples[:, :, j]) for j in range(4)])
        ess = np.array([effective_sample_size(samples[:, :, j]) for j in range(4)])
    else:
        rhat = np.full(4, float("nan"))
        ess = np.full(4, float("nan"))
    return PosteriorChains(samples=samples, accept_rate=np.array([0.3] * chains),
                           rhat=rhat, ess=ess, seed=seed)


@pytest.fixture(scope="module")
def small_problem():
    regions = recovery_regions()
    kernel = SpatialKernel(sigma=TRUTH.sigma)
    grid = simulated_grid(regions, kernel, TRUTH, months=30, seed=1000)
    return grid, regions, kernel


class TestSamplePosterior:
    def test_quick_run_shapes(self, small_problem):
        grid, regions, kernel = small_problem
        config = McmcConfig(chains=2, draws=60, warmup_draws=150, seed=7)
        chains = sample_posterior(grid, regions, kernel, config)
        assert chains.samples.shape == (2, 60, 4)
        assert np.all(chains.samples > 0)
        assert np.all(chains.samples[:, :, 2] < 1)
        assert chains.accept_rate.shape == (2,)
        assert chains.rhat.shape == (4,) and chains.ess.shape == (4,)
        assert chains.param_names == ("mu", "alpha", "beta", "sigma")

    def test_deterministic(self, small_problem):
        grid, regions, kernel = small_problem
        config = McmcConfig(chains=2, draws=40, warmup_draws=100, seed=11)
        a = sample_posterior(grid, regions, kernel, config)
        b = sample_posterior(grid, regions, kernel, config)
        np.testing.assert_array_equal(a.samples, b.samples)

    def test_prior_init(self, small_problem):
        grid, regions, kernel = small_problem
        config = McmcConfig(chains=2, draws=30, warmup_draws=80, seed=13,
                            init="prior")
        chains = sample_posterior(grid, regions, kernel, config)
        assert chains.samples.shape == (2, 30, 4)

    def test_explicit_infeasible_init_rejected(self, small_problem):
        grid, regions, kernel = small_problem
        bad = ModelParams(mu=1e-300, alpha=1e-300, beta=0.5, sigma=1.0, t_max=3)
        config = McmcConfig(chains=1, draws=10, warmup_draws=10, seed=17, init=bad)
        with pytest.raises(ValueError):
            sample_posterior(grid, regions, kernel, config)


class TestSummarize:
    def test_keys_and_percentiles(self):
        chains = quick_chains()
        summary = summarize(chains)
        assert set(summary.table) == {"mu", "alpha", "beta", "sigma"}
        entry = summary.table["mu"]
        assert set(entry) == {"mean", "median", "q2.5", "q50", "q97.5"}
        pooled = chains.pooled()[:, 0]
        assert entry["mean"] == pytest.approx(pooled.mean(), rel=1e-12)
        assert entry["q50"] == entry["median"]
        assert entry["q2.5"] <= entry["q50"] <= entry["q97.5"]

    def test_custom_levels(self):
        summary = summarize(quick_chains(), levels=(10.0, 90.0))
        assert set(summary.table["beta"]) == {"mean", "median", "q10", "q90"}


class TestChainSerialization:
    def test_round_trip(self, tmp_path):
        chains = quick_chains(seed=61, draws=40, chains=3)
        path = tmp_path / "chains.csv"
        write_chains(chains, path)
        header = path.read_text().splitlines()[0]
        assert header == "chain,draw,mu,alpha,beta,sigma"
        back = read_chains(path)
        assert back.samples.shape == chains.samples.shape
        np.testing.assert_allclose(back.samples, chains.samples, rtol=1e-15)
        np.testing.assert_allclose(back.rhat, chains.rhat, rtol=1e-12)
        np.testing.assert_allclose(back.ess, chains.ess, rtol=1e-12)
        assert math.isnan(back.accept_rate[0])

    def test_single_chain_diagnostics_nan(self, tmp_path):
        chains = quick_chains(seed=62, draws=20, chains=1)
        path = tmp_path / "one.csv"
        write_chains(chains, path)
        back = read_chains(path)
        assert all(math.isnan(v) for v in back.rhat)
