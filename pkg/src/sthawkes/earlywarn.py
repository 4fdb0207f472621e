"""Early-warning flags: model-based Poisson quantile thresholds vs a
rolling-average baseline.

The model route turns each posterior draw's region-summed intensity into
Poisson count quantiles per month, medians them across draws, smooths with
a trailing 12-month mean, and flags months whose observed total exceeds
the smoothed upper quantile. The baseline flags months more than k_sd
sample standard deviations above the mean of the preceding 12 months.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np

from .ingest import EventGrid, RegionSet
from .intensity import ModelParams, intensity_surface
from .ioutil import write_csv, write_json
from .kernels import SpatialKernel, build_weight_matrix
from .mcmc import PosteriorChains
from .forecast import select_draw_indices


def poisson_quantile(lam: float, q: float) -> int:
    """Smallest integer k with P(X <= k) >= q for X ~ Poisson(lam).

    Stable CDF summation via the pmf recurrence p_{k+1} = p_k * lam/(k+1).
    Past lam ~ 700 the leading terms underflow, so the sum starts from a
    normal-approximation bracket far enough left that the skipped tail is
    below float resolution.
    """
    if lam < 0 or not math.isfinite(lam):
        raise ValueError(f"lam must be finite and >= 0, got {lam}")
    if not 0.0 < q < 1.0:
        raise ValueError(f"q must be in (0, 1), got {q}")
    if lam == 0.0:
        return 0
    if lam <= 700.0:
        k = 0
        p = math.exp(-lam)
        cdf = p
        while cdf < q:
            k += 1
            p *= lam / k
            cdf += p
        return k
    k = max(0, int(lam - 12.0 * math.sqrt(lam) - 50.0))
    p = math.exp(k * math.log(lam) - lam - math.lgamma(k + 1.0))
    cdf = p
    while cdf < q:
        k += 1
        p *= lam / k
        cdf += p
    return k


@dataclass(frozen=True)
class FlagSeries:
    """Per-month flag decisions for one method.

    center and threshold are NaN for months where the window is undefined
    (only the naive method has such months); those months are never
    flagged. Invariant: flagged == (observed > threshold) wherever the
    threshold is defined.
    """

    month_index: np.ndarray
    observed: np.ndarray
    center: np.ndarray
    threshold: np.ndarray
    flagged: np.ndarray
    method: str

    @property
    def n_months(self) -> int:
        return self.month_index.size


def _trailing_mean(series: np.ndarray, window: int) -> np.ndarray:
    """Mean over [t-window+1, t] clipped at the series start (expanding)."""
    out = np.empty_like(series, dtype=float)
    csum = np.concatenate([[0.0], np.cumsum(series, dtype=float)])
    for t in range(series.size):
        lo = max(0, t - window + 1)
        out[t] = (csum[t + 1] - csum[lo]) / (t + 1 - lo)
    return out


def hawkes_flags(chains: PosteriorChains, grid: EventGrid, regions: RegionSet,
                 kernel: SpatialKernel, window: int = 12, q: float = 0.975,
                 n_samples: int = 100, seed: int = 0, t_max: int = 3,
                 roll_before_median: bool = False) -> FlagSeries:
    """Model-quantile flags on region-summed monthly totals.

    Per selected posterior draw and month: Poisson quantiles of the summed
    intensity at levels 2.5%, 50%, and q. Medians across draws, then a
    trailing `window` mean (current month included, expanding start). A
    month is flagged when its observed total exceeds the smoothed q-level.
    roll_before_median swaps steps 2 and 3: smooth each draw's quantile
    series first, then take the draw median.
    """
    if window < 1:
        raise ValueError("window must be >= 1")
    pooled = chains.pooled()
    n_sel = min(n_samples, pooled.shape[0])
    idx = select_draw_indices(pooled.shape[0], n_sel, seed)
    base = build_weight_matrix(kernel, regions)
    levels = (0.025, 0.5, float(q))

    T = grid.n_months
    K = np.empty((n_sel, T, 3))
    for s, j in enumerate(idx):
        mu, alpha, beta, sigma = pooled[j]
        p = ModelParams(mu=mu, alpha=alpha, beta=beta, sigma=sigma, t_max=t_max)
        lam_tot = intensity_surface(p, grid, base.rebuilt(sigma)).sum(axis=1)
        for t in range(T):
            for li, lv in enumerate(levels):
                K[s, t, li] = poisson_quantile(lam_tot[t], lv)

    if roll_before_median:
        rolled_per_draw = np.empty_like(K)
        for s in range(n_sel):
            for li in range(3):
                rolled_per_draw[s, :, li] = _trailing_mean(K[s, :, li], window)
        rolled = np.median(rolled_per_draw, axis=0)
    else:
        med = np.median(K, axis=0)  # (T, 3)
        rolled = np.column_stack([_trailing_mean(med[:, li], window) for li in range(3)])

    observed = grid.monthly_totals()
    threshold = rolled[:, 2]
    return FlagSeries(month_index=np.arange(T), observed=observed,
                      center=rolled[:, 1], threshold=threshold,
                      flagged=observed > threshold, method="hawkes")


def naive_flags(grid: Union[EventGrid, np.ndarray], window: int = 12,
                k_sd: float = 2.0) -> FlagSeries:
    """Rolling-average baseline on monthly totals.

    The window is strictly historical (months t-window..t-1); the first
    `window` months have no defined threshold and are never flagged. The
    spread is the sample standard deviation (denominator n-1).
    """
    totals = (grid.monthly_totals() if isinstance(grid, EventGrid)
              else np.asarray(grid, dtype=float))
    T = totals.size
    if T < 2:
        raise ValueError("need at least 2 months of data")
    if window < 2:
        raise ValueError("window must be >= 2 for a sample standard deviation")
    center = np.full(T, np.nan)
    threshold = np.full(T, np.nan)
    flagged = np.zeros(T, dtype=bool)
    for t in range(window, T):
        win = totals[t - window: t].astype(float)
        center[t] = win.mean()
        threshold[t] = center[t] + k_sd * win.std(ddof=1)
        flagged[t] = totals[t] > threshold[t]
    return FlagSeries(month_index=np.arange(T), observed=np.asarray(totals),
                      center=center, threshold=threshold, flagged=flagged,
                      method="naive")


@dataclass(frozen=True)
class ComparisonTable:
    month_index: np.ndarray
    observed: np.ndarray
    hawkes_flagged: np.ndarray
    naive_flagged: np.ndarray
    totals: dict


def compare_methods(hawkes: FlagSeries, naive: FlagSeries) -> ComparisonTable:
    """Side-by-side flags plus overlap totals. Month ranges must match."""
    if not np.array_equal(hawkes.month_index, naive.month_index):
        raise ValueError("flag series cover different month ranges")
    h = hawkes.flagged
    n = naive.flagged
    totals = {
        "n_months": int(h.size),
        "hawkes_flagged": int(h.sum()),
        "naive_flagged": int(n.sum()),
        "both": int((h & n).sum()),
        "only_hawkes": int((h & ~n).sum()),
        "only_naive": int((~h & n).sum()),
        "neither": int((~h & ~n).sum()),
    }
    return ComparisonTable(month_index=hawkes.month_index, observed=hawkes.observed,
                           hawkes_flagged=h, naive_flagged=n, totals=totals)


# ---------------------------------------------------------------------------
# Serialization


def write_flags(series: FlagSeries, path) -> None:
    rows = []
    for i in range(series.n_months):
        rows.append((int(series.month_index[i]), int(series.observed[i]),
                     float(series.center[i]), float(series.threshold[i]),
                     bool(series.flagged[i]), series.method))
    write_csv(path, ["month_index", "observed", "center", "threshold",
                     "flagged", "method"], rows)


def write_comparison(table: ComparisonTable, csv_path, totals_path) -> None:
    rows = []
    for i in range(table.month_index.size):
        rows.append((int(table.month_index[i]), int(table.observed[i]),
                     bool(table.hawkes_flagged[i]), bool(table.naive_flagged[i])))
    write_csv(csv_path, ["month_index", "observed", "hawkes_flagged",
                         "naive_flagged"], rows)
    write_json(totals_path, table.totals)
