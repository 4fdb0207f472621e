"""Forward simulation, posterior-predictive ensembles, and percentile maps.

Simulation follows the generative model directly: each month's counts are
Poisson draws around the intensity computed from observed history plus the
months simulated so far, so excitation feeds back into later months.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from .ingest import EventGrid, RegionSet
from .intensity import ModelParams, intensity_surface
from .kernels import SpatialKernel, SpatialWeightMatrix, build_weight_matrix, temporal_pmf
from .ioutil import write_csv
from .mcmc import PosteriorChains


@dataclass(frozen=True)
class SimulatedGrid:
    counts: np.ndarray  # (horizon, R) non-negative integers
    seed: int


@dataclass(frozen=True)
class PredictiveEnsemble:
    draws: list  # of SimulatedGrid, equal shapes
    horizon: int
    n_samples: int
    base_month_index: int  # month_index of the first simulated row
    region_ids: tuple


@dataclass(frozen=True)
class PercentileSummary:
    axis: str  # "space" | "time" | "cell"
    keys: list  # region ids, month indexes, or "month:region" strings
    levels: tuple  # percentile levels, ascending
    values: np.ndarray  # (n_levels, n_keys), rows ordered like levels


def simulate_forward(params: ModelParams, history, weights: SpatialWeightMatrix,
                     horizon: int, seed: int) -> SimulatedGrid:
    """Simulate `horizon` months past the end of `history`.

    history is an EventGrid or a (T0, R) count array; T0 may be smaller
    than t_max (missing lags contribute nothing). Bit-reproducible for a
    fixed seed.
    """
    hist = np.asarray(getattr(history, "counts", history), dtype=np.float64)
    if hist.ndim != 2:
        raise ValueError("history must be a T x R count matrix")
    R = hist.shape[1]
    if weights.n_regions != R:
        raise ValueError("weight matrix does not match history regions")
    if horizon < 1:
        raise ValueError("horizon must be >= 1")

    g = temporal_pmf(params.beta, params.t_max)
    rng = np.random.default_rng(seed)
    # ring of the last t_max rows, most recent first
    recent = [hist[-s] for s in range(1, min(params.t_max, hist.shape[0]) + 1)]
    out = np.empty((horizon, R), dtype=np.int64)
    for h in range(horizon):
        lam = np.full(R, params.mu)
        if params.alpha > 0 and recent:
            stacked = np.asarray(recent)  # (lags, R), row 0 = lag 1
            lam = lam + params.alpha * ((g[: len(recent)] @ stacked) @ weights.w)
        row = rng.poisson(lam)
        out[h] = row
        recent.insert(0, row.astype(np.float64))
        if len(recent) > params.t_max:
            recent.pop()
    return SimulatedGrid(counts=out, seed=int(seed))


def select_draw_indices(n_pool: int, n_samples: int, seed: int) -> np.ndarray:
    """Deterministic low-autocorrelation subset: shuffle, then stride evenly."""
    if n_samples > n_pool:
        raise ValueError(f"requested {n_samples} samples from a pool of {n_pool}")
    rng = np.random.default_rng([seed, 1])
    perm = rng.permutation(n_pool)
    stride = n_pool // n_samples
    return perm[::stride][:n_samples]


def _member_seed(seed: int, i: int) -> int:
    return int(np.random.SeedSequence([seed, 2, i]).generate_state(1, np.uint64)[0])


def posterior_predictive(chains: PosteriorChains, history: EventGrid,
                         regions: RegionSet, kernel: SpatialKernel,
                         horizon: int = 3, n_samples: int = 100,
                         seed: int = 0, t_max: int = 3) -> PredictiveEnsemble:
    """One forward simulation per selected posterior draw.

    Draw selection errors out if n_samples exceeds the pooled draw count.
    sigma varies between draws, so the weight matrix is rebuilt per member
    from the cached distances.
    """
    pooled = chains.pooled()
    idx = select_draw_indices(pooled.shape[0], n_samples, seed)
    base = build_weight_matrix(kernel, regions)
    members = []
    for i, j in enumerate(idx):
        mu, alpha, beta, sigma = pooled[j]
        p = ModelParams(mu=mu, alpha=alpha, beta=beta, sigma=sigma, t_max=t_max)
        members.append(simulate_forward(p, history, base.rebuilt(sigma),
                                        horizon, _member_seed(seed, i)))
    return PredictiveEnsemble(draws=members, horizon=horizon, n_samples=n_samples,
                              base_month_index=history.n_months,
                              region_ids=tuple(history.region_ids))


def point_predictive(params: ModelParams, history: EventGrid, regions: RegionSet,
                     kernel: SpatialKernel, horizon: int = 3,
                     seed: int = 0) -> PredictiveEnsemble:
    """Single-member ensemble from a point estimate (MLE-style prediction)."""
    base = build_weight_matrix(kernel, regions)
    member = simulate_forward(params, history, base.rebuilt(params.sigma),
                              horizon, _member_seed(seed, 0))
    return PredictiveEnsemble(draws=[member], horizon=horizon, n_samples=1,
                              base_month_index=history.n_months,
                              region_ids=tuple(history.region_ids))


def aggregate_percentiles(ensemble: PredictiveEnsemble, axis: str,
                          levels: Sequence[float] = (2.5, 50.0, 97.5)) -> PercentileSummary:
    """Percentiles across ensemble members of totals along the chosen axis.

    space: per-region totals over the horizon. time: per-month totals over
    regions. cell: every (month, region) pair separately.
    """
    if not ensemble.draws:
        raise ValueError("empty ensemble")
    levels = tuple(sorted(float(v) for v in levels))
    stack = np.stack([m.counts for m in ensemble.draws])  # (M, H, R)
    base = ensemble.base_month_index
    if axis == "space":
        data = stack.sum(axis=1)  # (M, R)
        keys = list(ensemble.region_ids)
    elif axis == "time":
        data = stack.sum(axis=2)  # (M, H)
        keys = [base + h for h in range(ensemble.horizon)]
    elif axis == "cell":
        M = stack.shape[0]
        data = stack.reshape(M, -1)  # month-major
        keys = [f"{base + h}:{rid}" for h in range(ensemble.horizon)
                for rid in ensemble.region_ids]
    else:
        raise ValueError(f"unknown axis {axis!r}")
    values = np.percentile(data, levels, axis=0)
    return PercentileSummary(axis=axis, keys=keys, levels=levels, values=values)


def fitted_intensity_intervals(chains: PosteriorChains, grid: EventGrid,
                               regions: RegionSet, kernel: SpatialKernel,
                               levels: Sequence[float] = (2.5, 50.0, 97.5),
                               t_max: int = 3) -> PercentileSummary:
    """Per-month percentile ribbon of region-summed fitted intensity.

    Every pooled posterior draw contributes one intensity curve; the
    percentiles are over draws, separately per month.
    """
    levels = tuple(sorted(float(v) for v in levels))
    pooled = chains.pooled()
    base = build_weight_matrix(kernel, regions)
    curves = np.empty((pooled.shape[0], grid.n_months))
    for i, (mu, alpha, beta, sigma) in enumerate(pooled):
        p = ModelParams(mu=mu, alpha=alpha, beta=beta, sigma=sigma, t_max=t_max)
        curves[i] = intensity_surface(p, grid, base.rebuilt(sigma)).sum(axis=1)
    values = np.percentile(curves, levels, axis=0)
    return PercentileSummary(axis="time", keys=list(range(grid.n_months)),
                             levels=levels, values=values)


@dataclass(frozen=True)
class RiskMap:
    region_ids: tuple
    xy: np.ndarray  # (R, 2) centroids
    q: np.ndarray  # (n_levels, R)
    levels: tuple
    no_data: np.ndarray  # bool per region: zero events recorded in-window


def spatial_risk_map(fit: Union[PosteriorChains, ModelParams], grid: EventGrid,
                     regions: RegionSet, kernel: SpatialKernel,
                     month: Union[int, str] = "median-over-window",
                     levels: Sequence[float] = (2.5, 50.0, 97.5),
                     t_max: int = 3) -> RiskMap:
    """Per-region intensity percentiles at one month, or the within-window
    median month. A point estimate collapses all levels to one value."""
    levels = tuple(sorted(float(v) for v in levels))
    if isinstance(month, str) and month != "median-over-window":
        raise ValueError(f"month must be an index or 'median-over-window', got {month!r}")
    if isinstance(month, (int, np.integer)) and not 0 <= int(month) < grid.n_months:
        raise ValueError(f"month index {month} outside the grid (0..{grid.n_months - 1})")

    if isinstance(fit, PosteriorChains):
        pooled = fit.pooled()
    else:
        pooled = fit.as_array()[None, :]
    base = build_weight_matrix(kernel, regions)
    vals = np.empty((pooled.shape[0], grid.n_regions))
    for i, (mu, alpha, beta, sigma) in enumerate(pooled):
        p = ModelParams(mu=mu, alpha=alpha, beta=beta, sigma=sigma, t_max=t_max)
        lam = intensity_surface(p, grid, base.rebuilt(sigma))
        if isinstance(month, str):
            vals[i] = np.median(lam, axis=0)
        else:
            vals[i] = lam[int(month)]
    q = np.percentile(vals, levels, axis=0)
    return RiskMap(region_ids=tuple(grid.region_ids), xy=regions.xy,
                   q=q, levels=levels, no_data=grid.counts.sum(axis=0) == 0)


# ---------------------------------------------------------------------------
# Serialization


def write_ensemble(ensemble: PredictiveEnsemble, path) -> None:
    rows = []
    for m, member in enumerate(ensemble.draws):
        for h in range(ensemble.horizon):
            for r, rid in enumerate(ensemble.region_ids):
                rows.append((m, ensemble.base_month_index + h, rid,
                             int(member.counts[h, r])))
    write_csv(path, ["member", "month_index", "region_id", "count"], rows)


def _level_header(levels) -> list:
    return [f"q{lv:g}" for lv in levels]


def write_percentiles(summary: PercentileSummary, path) -> None:
    header = ["axis", "key"] + _level_header(summary.levels)
    rows = []
    for k, key in enumerate(summary.keys):
        rows.append([summary.axis, key] + [summary.values[i, k]
                                           for i in range(len(summary.levels))])
    write_csv(path, header, rows)


def write_risk_map(risk: RiskMap, path) -> None:
    header = ["region_id", "cx", "cy"] + _level_header(risk.levels) + ["no_data"]
    rows = []
    for r, rid in enumerate(risk.region_ids):
        rows.append([rid, risk.xy[r, 0], risk.xy[r, 1]]
                    + [risk.q[i, r] for i in range(len(risk.levels))]
                    + [bool(risk.no_data[r])])
    write_csv(path, header, rows)
