"""Posterior sampling via adaptive random-walk Metropolis, plus diagnostics.

The sampler walks the transformed space (log mu, log alpha, logit beta,
log sigma) with a Gaussian proposal. During warm-up the proposal shape
tracks the running sample covariance and a global step factor chases a
0.234 acceptance rate; adaptation freezes before retained draws begin, so
the recorded chain is a plain Metropolis chain with a fixed kernel.

Diagnostics: rank-normalized split R-hat and autocorrelation-based
effective sample size with initial-monotone-pair truncation.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence, Union

import numpy as np
from scipy.special import ndtri
from scipy.stats import rankdata

from .ingest import EventGrid, RegionSet
from .intensity import PARAM_NAMES, ModelParams, log_posterior
from .ioutil import InputError, write_csv
from .kernels import SpatialKernel, build_weight_matrix
from .mle import fit_mle, from_transformed, to_transformed


@dataclass(frozen=True)
class McmcConfig:
    chains: int = 4
    draws: int = 1000  # retained per chain, after warm-up
    warmup_draws: int = 1000
    seed: int = 0
    init: Union[str, ModelParams] = "mle"  # "mle" | "prior" | explicit point
    thin: int = 1  # proposals per retained draw; retained count stays `draws`

    def __post_init__(self):
        if self.chains < 1:
            raise ValueError("chains must be >= 1")
        if self.draws < 1 or self.warmup_draws < 1 or self.thin < 1:
            raise ValueError("draws, warmup_draws, and thin must be >= 1")
        if isinstance(self.init, str) and self.init not in ("mle", "prior"):
            raise ValueError(f"init must be 'mle', 'prior', or ModelParams, got {self.init!r}")

    def echo(self) -> dict:
        init = self.init if isinstance(self.init, str) else {
            "mu": self.init.mu, "alpha": self.init.alpha,
            "beta": self.init.beta, "sigma": self.init.sigma,
        }
        return {"chains": self.chains, "draws": self.draws,
                "warmup_draws": self.warmup_draws, "seed": self.seed,
                "init": init, "thin": self.thin}


@dataclass(frozen=True)
class PosteriorChains:
    samples: np.ndarray  # (chains, draws, 4) in natural space
    accept_rate: np.ndarray  # per chain, over retained phase
    rhat: np.ndarray  # per parameter
    ess: np.ndarray  # per parameter
    seed: int
    divergences: int = 0  # random-walk kernel has no divergence concept
    param_names: tuple = PARAM_NAMES

    @property
    def n_chains(self) -> int:
        return self.samples.shape[0]

    @property
    def n_draws(self) -> int:
        return self.samples.shape[1]

    def pooled(self) -> np.ndarray:
        return self.samples.reshape(-1, self.samples.shape[2])


@dataclass(frozen=True)
class PosteriorSummary:
    table: dict  # param -> {"mean", "median", "q2.5", "q97.5", ...}
    param_names: tuple = PARAM_NAMES

    def to_json_dict(self) -> dict:
        return {k: dict(v) for k, v in self.table.items()}


# ---------------------------------------------------------------------------
# Generic adaptive random-walk Metropolis over R^d


def adaptive_rwm(logpdf, x0, draws: int, warmup: int, rng,
                 target_accept: float = 0.234, adapt_window: int = 50,
                 init_scale: float = 0.1, thin: int = 1,
                 jump_prob: float = 0.0, jump_sd: float = 1.0):
    """Sample `draws` points (thinned) after `warmup` adaptation steps.

    The proposal is a mixture: with probability 1 - jump_prob a random
    walk shaped by the adapted covariance, else an independence draw from
    N(x0, jump_sd^2 I) with the matching Hastings correction. The
    independence leg (off by default) can land in a separated mode that
    the tuned walk would never reach, at the cost of sometimes parking a
    chain in a sharp minor mode, so it is opt-in.

    Returns (samples (draws, d), accept_rate over the retained phase).
    logpdf must return -inf (not raise) for out-of-support points.
    """
    x = np.array(x0, dtype=float)
    d = x.size
    lp = float(logpdf(x))
    if not math.isfinite(lp):
        raise ValueError("initial point has non-finite log density; choose a different init")

    anchor = x.copy()
    base_log_step = math.log(2.38 / math.sqrt(d))
    log_step = base_log_step
    chol = np.eye(d) * init_scale

    def step():
        """One mixture-kernel transition; returns (accepted, was_walk)."""
        nonlocal x, lp
        z = rng.standard_normal(d)
        if rng.random() < jump_prob:
            prop = anchor + jump_sd * z
            # Hastings term: proposal density is independent of state
            back = (x - anchor) / jump_sd
            corr = (float(z @ z) - float(back @ back)) / 2.0
            walk = False
        else:
            prop = x + math.exp(log_step) * (chol @ z)
            corr = 0.0
            walk = True
        lp_prop = float(logpdf(prop))
        if lp_prop - lp + corr > math.log(rng.random()):
            x, lp = prop, lp_prop
            return True, walk
        return False, walk

    # Warm-up runs in doubling segments. Each shape segment ends by
    # re-estimating the proposal covariance from that segment alone and
    # restarting the step-size controller, so an early transient cannot
    # poison the frozen kernel. A short terminal segment tunes only the
    # step size against the final shape.
    terminal = min(200, max(adapt_window, warmup // 4))
    shape_total = max(warmup - terminal, 0)
    segments = []
    pos, width = 0, 2 * adapt_window
    while pos < shape_total:
        end = min(pos + width, shape_total)
        if shape_total - end < 2 * width:
            end = shape_total  # absorb a tail too short to estimate from
        segments.append((end - pos, True))
        pos = end
        width *= 2
    if warmup - shape_total > 0:
        segments.append((warmup - shape_total, False))

    for seg_len, refresh in segments:
        count = 0
        mean = np.zeros(d)
        m2 = np.zeros((d, d))
        acc_walk = 0
        n_walk = 0
        since = 0
        batch = 0
        for _ in range(seg_len):
            accepted, walk = step()
            if walk:
                acc_walk += accepted
                n_walk += 1
            since += 1
            count += 1
            delta = x - mean
            mean += delta / count
            m2 += np.outer(delta, x - mean)
            if since == adapt_window:
                batch += 1
                if n_walk:  # step-size feedback reads the walk leg only
                    log_step += (acc_walk / n_walk - target_accept) / math.sqrt(batch)
                acc_walk = 0
                n_walk = 0
                since = 0
        if refresh and count >= 2 * adapt_window:
            cov = m2 / (count - 1)
            if np.all(np.isfinite(cov)) and np.trace(cov) > 0:
                try:
                    chol = np.linalg.cholesky(cov + 1e-12 * np.eye(d))
                    log_step = base_log_step
                except np.linalg.LinAlgError:
                    pass  # keep the previous shape

    samples = np.empty((draws, d))
    accepted_total = 0
    total_steps = draws * thin
    k = 0
    for i in range(total_steps):
        accepted, _ = step()
        accepted_total += accepted
        if (i + 1) % thin == 0:
            samples[k] = x
            k += 1
    return samples, accepted_total / max(total_steps, 1)


# ---------------------------------------------------------------------------
# Model target


def _log_jacobian(theta: np.ndarray) -> float:
    # log|d(natural)/d(transformed)| for (log, log, logit, log)
    softplus_p = np.logaddexp(0.0, theta[2])
    softplus_m = np.logaddexp(0.0, -theta[2])
    return float(theta[0] + theta[1] + theta[3] - softplus_p - softplus_m)


def make_transformed_target(grid: EventGrid, regions: RegionSet,
                            kernel: SpatialKernel, t_max: int):
    """log posterior in transformed space, Jacobian-corrected."""
    base = build_weight_matrix(kernel, regions)

    def target(theta: np.ndarray) -> float:
        try:
            p = from_transformed(theta, t_max)
        except (ValueError, OverflowError):
            return float("-inf")
        lp = log_posterior(p, grid, base.rebuilt(p.sigma))
        if not math.isfinite(lp):
            return float("-inf")
        return lp + _log_jacobian(theta)

    return target


def _draw_prior_params(rng, t_max: int) -> ModelParams:
    mu = rng.gamma(2.0, 0.5)  # shape 2, rate 2
    alpha = rng.gamma(2.0, 0.5)
    beta = rng.uniform(0.0, 1.0)
    sigma = 5.0 / rng.gamma(5.0, 1.0)  # inverse-gamma shape 5, scale 5
    return ModelParams(mu=max(mu, 1e-9), alpha=max(alpha, 1e-9),
                       beta=min(max(beta, 1e-9), 1.0 - 1e-9),
                       sigma=max(sigma, 1e-9), t_max=t_max)


def sample_posterior(grid: EventGrid, regions: RegionSet, kernel: SpatialKernel,
                     config: McmcConfig, t_max: int = 3) -> PosteriorChains:
    """Run `config.chains` independent adaptive RWM chains.

    Reproducible: chain c uses the RNG stream seeded by (seed, c), so the
    result is identical regardless of how chains are scheduled.
    """
    target = make_transformed_target(grid, regions, kernel, t_max)

    theta_center = None
    if isinstance(config.init, ModelParams):
        theta_center = to_transformed(config.init)
        if not math.isfinite(target(theta_center)):
            raise ValueError("init point has -inf posterior; choose a different init")
    elif config.init == "mle":
        try:
            fit = fit_mle(grid, regions, kernel, t_max=t_max)
            cand = to_transformed(fit.params)
            if math.isfinite(target(cand)):
                theta_center = cand
        except (ValueError, FloatingPointError):
            theta_center = None  # fall back to prior draws

    all_samples = np.empty((config.chains, config.draws, 4))
    accept = np.empty(config.chains)
    for c in range(config.chains):
        rng = np.random.default_rng([config.seed, c])
        theta0 = _chain_init(target, theta_center, rng, t_max)
        draws_t, rate = adaptive_rwm(target, theta0, config.draws,
                                     config.warmup_draws, rng, thin=config.thin)
        all_samples[c, :, 0] = np.exp(draws_t[:, 0])
        all_samples[c, :, 1] = np.exp(draws_t[:, 1])
        all_samples[c, :, 2] = 1.0 / (1.0 + np.exp(-draws_t[:, 2]))
        all_samples[c, :, 3] = np.exp(draws_t[:, 3])
        accept[c] = rate

    rhat = np.array([split_rhat(all_samples[:, :, j]) for j in range(4)])
    ess = np.array([effective_sample_size(all_samples[:, :, j]) for j in range(4)])
    return PosteriorChains(samples=all_samples, accept_rate=accept,
                           rhat=rhat, ess=ess, seed=config.seed)


def _chain_init(target, theta_center, rng, t_max: int) -> np.ndarray:
    if theta_center is not None:
        for _ in range(100):
            cand = theta_center + 0.1 * rng.standard_normal(4)
            if math.isfinite(target(cand)):
                return cand
        raise ValueError("could not find a finite-posterior point near the init")
    for _ in range(200):
        cand = to_transformed(_draw_prior_params(rng, t_max))
        if math.isfinite(target(cand)):
            return cand
    raise ValueError("prior draws never reached a finite posterior; check the data")


# ---------------------------------------------------------------------------
# Diagnostics


def _rank_normalize(seqs: np.ndarray) -> np.ndarray:
    flat = rankdata(seqs.ravel(), method="average")
    n = flat.size
    return ndtri((flat - 0.375) / (n + 0.25)).reshape(seqs.shape)


def split_rhat(values: np.ndarray) -> float:
    """Rank-normalized split R-hat for one parameter.

    values is (chains, draws). Chains are halved, all halves are jointly
    rank-normalized, and the classic between/within variance ratio is taken.
    Constant input returns NaN.
    """
    x = np.asarray(values, dtype=float)
    if x.ndim != 2 or x.shape[0] < 2 or x.shape[1] < 4:
        raise ValueError("split_rhat needs >= 2 chains and >= 4 draws")
    half = x.shape[1] // 2
    seqs = np.concatenate([x[:, :half], x[:, half: 2 * half]], axis=0)
    if np.all(seqs == seqs.flat[0]):
        return float("nan")
    z = _rank_normalize(seqs)
    n = z.shape[1]
    within = z.var(axis=1, ddof=1).mean()
    between = n * z.mean(axis=1).var(ddof=1)
    if within == 0.0:
        return float("inf")
    var_plus = (n - 1) / n * within + between / n
    return float(math.sqrt(var_plus / within))


def _autocovariance(x: np.ndarray) -> np.ndarray:
    """Biased autocovariance by lag for one chain, FFT-based."""
    n = x.size
    xd = x - x.mean()
    size = 1
    while size < 2 * n:
        size <<= 1
    f = np.fft.rfft(xd, size)
    acov = np.fft.irfft(f * np.conj(f), size)[:n].real / n
    return acov


def effective_sample_size(values: np.ndarray) -> float:
    """ESS across chains with Geyer initial-monotone pair truncation.

    Capped at the total draw count; constant input returns 0.
    """
    x = np.asarray(values, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    m, n = x.shape
    if n < 4:
        raise ValueError("effective_sample_size needs >= 4 draws")
    if np.all(x == x.flat[0]):
        return 0.0

    acov = np.stack([_autocovariance(x[c]) for c in range(m)])
    chain_var = acov[:, 0] * n / (n - 1)
    within = chain_var.mean()
    if m > 1:
        between_over_n = x.mean(axis=1).var(ddof=1)
        var_plus = within * (n - 1) / n + between_over_n
    else:
        var_plus = within * (n - 1) / n
    if var_plus == 0.0:
        return 0.0

    rho = 1.0 - (within - acov.mean(axis=0)) / var_plus
    rho[0] = 1.0
    # Geyer pairs: truncate at the first non-positive pair sum, then force
    # the pair sums to be non-increasing
    max_pairs = n // 2
    pair_sums = []
    for k in range(max_pairs):
        s = rho[2 * k] + (rho[2 * k + 1] if 2 * k + 1 < n else 0.0)
        if s <= 0.0:
            break
        if pair_sums and s > pair_sums[-1]:
            s = pair_sums[-1]
        pair_sums.append(s)
    tau = max(2.0 * sum(pair_sums) - 1.0, 1.0 / (m * n))
    return float(min(m * n / tau, m * n))


def summarize(chains: PosteriorChains,
              levels: Sequence[float] = (2.5, 50.0, 97.5)) -> PosteriorSummary:
    """Pooled-draw mean, median, and percentiles (linear interpolation)."""
    pooled = chains.pooled()
    table = {}
    for j, name in enumerate(chains.param_names):
        col = pooled[:, j]
        entry = {"mean": float(col.mean()), "median": float(np.percentile(col, 50.0))}
        for lv in levels:
            entry[_q_key(lv)] = float(np.percentile(col, lv))
        table[name] = entry
    return PosteriorSummary(table=table, param_names=chains.param_names)


def _q_key(level: float) -> str:
    s = f"{level:g}"
    return f"q{s}"


# ---------------------------------------------------------------------------
# Serialization


def write_chains(chains: PosteriorChains, csv_path) -> None:
    rows = []
    for c in range(chains.n_chains):
        for d in range(chains.n_draws):
            mu, alpha, beta, sigma = chains.samples[c, d]
            rows.append((c, d, mu, alpha, beta, sigma))
    write_csv(csv_path, ["chain", "draw", "mu", "alpha", "beta", "sigma"], rows)


def read_chains(csv_path, seed: int = 0) -> PosteriorChains:
    csv_path = Path(csv_path)
    if not csv_path.exists():
        raise InputError(f"chains file not found: {csv_path}")
    per_chain: dict = {}
    with open(csv_path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        expected = {"chain", "draw", "mu", "alpha", "beta", "sigma"}
        if reader.fieldnames is None or set(reader.fieldnames) != expected:
            raise InputError(f"chains file must have columns {sorted(expected)}")
        for row in reader:
            c = int(row["chain"])
            per_chain.setdefault(c, []).append(
                (int(row["draw"]), float(row["mu"]), float(row["alpha"]),
                 float(row["beta"]), float(row["sigma"])))
    if not per_chain:
        raise InputError(f"chains file is empty: {csv_path}")
    chain_ids = sorted(per_chain)
    n_draws = len(per_chain[chain_ids[0]])
    samples = np.empty((len(chain_ids), n_draws, 4))
    for i, c in enumerate(chain_ids):
        rows = sorted(per_chain[c])
        if len(rows) != n_draws:
            raise InputError("chains file has unequal chain lengths")
        samples[i] = np.array([r[1:] for r in rows])
    if len(chain_ids) >= 2 and n_draws >= 4:
        rhat = np.array([split_rhat(samples[:, :, j]) for j in range(4)])
        ess = np.array([effective_sample_size(samples[:, :, j]) for j in range(4)])
    else:
        rhat = np.full(4, np.nan)
        ess = np.full(4, np.nan)
    return PosteriorChains(samples=samples,
                           accept_rate=np.full(len(chain_ids), np.nan),
                           rhat=rhat, ess=ess, seed=seed)
