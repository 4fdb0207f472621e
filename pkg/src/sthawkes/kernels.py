"""Temporal and spatial triggering kernels.

The temporal kernel is a geometric distribution truncated to lags
1..t_max and renormalized. The spatial kernel is an RBF over centroid
distance; note the exponent uses d, not d squared, by default. The
conventional squared form is available via SpatialKernel.squared_distance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .ingest import RegionSet

EARTH_RADIUS_KM = 6371.0


def temporal_pmf(beta: float, t_max: int) -> np.ndarray:
    """Triggering mass at lags 1..t_max: g(s) proportional to beta*(1-beta)^(s-1).

    beta = 1 is the degenerate limit (1, 0, ..., 0): all mass at lag 1.
    Entries sum to 1 by construction.
    """
    if not 0.0 < beta <= 1.0:
        raise ValueError(f"beta must be in (0, 1], got {beta}")
    if t_max < 1:
        raise ValueError(f"t_max must be >= 1, got {t_max}")
    # beta cancels in the normalization, so work with w_s = (1-beta)^(s-1):
    # w_1 = 1 keeps the total >= 1 however small beta gets
    w = (1.0 - beta) ** np.arange(t_max)
    return w / w.sum()


def temporal_pmf_grad(beta: float, t_max: int) -> np.ndarray:
    """d g(s) / d beta at lags 1..t_max. Entries sum to 0 (mass is conserved).

    Requires beta strictly inside (0, 1): quotient rule on w_s/W with
    w_s = q^(s-1), q = 1-beta. W >= 1, so nothing here can underflow.
    """
    if not 0.0 < beta < 1.0:
        raise ValueError(f"beta must be in (0, 1) for the gradient, got {beta}")
    if t_max < 1:
        raise ValueError(f"t_max must be >= 1, got {t_max}")
    q = 1.0 - beta
    s = np.arange(1, t_max + 1, dtype=float)
    w = q ** (s - 1.0)
    dw = -(s - 1.0) * q ** np.maximum(s - 2.0, 0.0)
    W = w.sum()
    return (dw * W - w * dw.sum()) / W**2


@dataclass(frozen=True)
class TemporalKernel:
    beta: float
    t_max: int
    pmf: np.ndarray

    @classmethod
    def build(cls, beta: float, t_max: int) -> "TemporalKernel":
        return cls(beta=float(beta), t_max=int(t_max), pmf=temporal_pmf(beta, t_max))


@dataclass(frozen=True)
class SpatialKernel:
    """RBF decay spec: weight exp(-d / (2 sigma^2)), d in metric units.

    metric "euclidean" measures degrees, "haversine" great-circle km.
    squared_distance switches the exponent to d^2 (the textbook RBF).
    sigma is in the units of the chosen metric.
    """

    sigma: float = 1.0
    metric: str = "euclidean"
    squared_distance: bool = False

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if self.metric not in ("euclidean", "haversine"):
            raise ValueError(f"unknown metric {self.metric!r}")

    def with_sigma(self, sigma: float) -> "SpatialKernel":
        return replace(self, sigma=float(sigma))


def spatial_distance(z, zi, metric: str = "euclidean") -> float:
    """Distance between two (x, y) coordinate pairs.

    euclidean: plain degree-space distance. haversine: great-circle km on a
    6371 km sphere, with coordinates read as (lon, lat) degrees.
    """
    x, y = float(z[0]), float(z[1])
    xi, yi = float(zi[0]), float(zi[1])
    if not all(map(math.isfinite, (x, y, xi, yi))):
        raise ValueError("coordinates must be finite")
    if metric == "euclidean":
        return math.hypot(x - xi, y - yi)
    if metric == "haversine":
        lam1, phi1, lam2, phi2 = map(math.radians, (x, y, xi, yi))
        a = math.sin((phi2 - phi1) / 2.0) ** 2 + math.cos(phi1) * math.cos(phi2) * math.sin((lam2 - lam1) / 2.0) ** 2
        return 2.0 * EARTH_RADIUS_KM * math.asin(min(1.0, math.sqrt(a)))
    raise ValueError(f"unknown metric {metric!r}")


def spatial_weight(kernel: SpatialKernel, z, zi) -> float:
    """exp(-d / (2 sigma^2)), or exp(-d^2 / (2 sigma^2)) with squared_distance."""
    d = spatial_distance(z, zi, kernel.metric)
    if kernel.squared_distance:
        d = d * d
    return math.exp(-d / (2.0 * kernel.sigma**2))


def pairwise_distances(regions: RegionSet, metric: str = "euclidean",
                       squared: bool = False) -> np.ndarray:
    """R x R matrix of centroid distances (or squared distances)."""
    R = len(regions)
    d = np.zeros((R, R))
    for i in range(R):
        for j in range(i + 1, R):
            d[i, j] = d[j, i] = spatial_distance(regions.xy[i], regions.xy[j], metric)
    if squared:
        d = d * d
    return d


@dataclass(frozen=True)
class SpatialWeightMatrix:
    """Cached pairwise weights plus the distances they were built from.

    Keeping dpow (the distance matrix, already squared when the kernel asks
    for it) lets samplers rebuild w for a new sigma without touching the
    coordinates again, and gives the sigma-derivative dw/dsigma = w * dpow /
    sigma^3 directly.
    """

    w: np.ndarray  # (R, R), symmetric, unit diagonal, entries in (0, 1]
    dpow: np.ndarray  # (R, R) distances, squared iff the kernel is squared
    sigma: float

    def rebuilt(self, sigma: float) -> "SpatialWeightMatrix":
        if not sigma > 0:
            raise ValueError(f"sigma must be positive, got {sigma}")
        if sigma == self.sigma:
            return self
        return SpatialWeightMatrix(
            w=np.exp(-self.dpow / (2.0 * sigma**2)), dpow=self.dpow, sigma=float(sigma)
        )

    @property
    def n_regions(self) -> int:
        return self.w.shape[0]


def build_weight_matrix(kernel: SpatialKernel, regions: RegionSet) -> SpatialWeightMatrix:
    dpow = pairwise_distances(regions, kernel.metric, kernel.squared_distance)
    w = np.exp(-dpow / (2.0 * kernel.sigma**2))
    return SpatialWeightMatrix(w=w, dpow=dpow, sigma=float(kernel.sigma))
