"""Discrete-time spatiotemporal Hawkes processes on monthly count grids.

Library layout:

* ingest: event CSV parsing, region assignment, monthly aggregation
* kernels: temporal (truncated geometric) and spatial (RBF) kernels
* intensity: conditional intensity, likelihood, priors, posterior, BIC
* mle: transformed-space maximum likelihood with Hessian standard errors
* mcmc: adaptive random-walk Metropolis, R-hat, ESS, posterior summaries
* forecast: forward simulation, predictive ensembles, percentile maps
* earlywarn: model-quantile flags and the rolling-average baseline
* cli: the `sthawkes` command
* backend: numba/numpy kernel selection (STHAWKES_NUMBA)
"""

from .backend import NUMBA_ENABLED, backend_name
from .earlywarn import (FlagSeries, compare_methods, hawkes_flags, naive_flags,
                        poisson_quantile)
from .forecast import (PredictiveEnsemble, SimulatedGrid, aggregate_percentiles,
                       fitted_intensity_intervals, posterior_predictive,
                       simulate_forward, spatial_risk_map)
from .ingest import (EventGrid, EventRecord, RegionSet, aggregate_counts,
                     assign_regions, parse_events, read_grid, set_warmup,
                     write_grid)
from .intensity import (FitStatistics, ModelParams, bic, intensity_surface,
                        log_likelihood, log_likelihood_gradient, log_posterior,
                        log_prior)
from .kernels import (SpatialKernel, SpatialWeightMatrix, TemporalKernel,
                      build_weight_matrix, spatial_distance, spatial_weight,
                      temporal_pmf)
from .mcmc import (McmcConfig, PosteriorChains, PosteriorSummary,
                   effective_sample_size, sample_posterior, split_rhat,
                   summarize)
from .mle import MleFit, OptimConfig, fit_mle, hessian_std_errors

__version__ = "0.1.0"

__all__ = [
    "EventGrid", "EventRecord", "FitStatistics", "FlagSeries", "McmcConfig",
    "MleFit", "ModelParams", "OptimConfig", "PosteriorChains",
    "PosteriorSummary", "PredictiveEnsemble", "RegionSet", "SimulatedGrid",
    "SpatialKernel", "SpatialWeightMatrix", "TemporalKernel",
    "NUMBA_ENABLED", "aggregate_counts", "aggregate_percentiles",
    "assign_regions", "backend_name", "bic", "build_weight_matrix",
    "compare_methods", "effective_sample_size", "fit_mle",
    "fitted_intensity_intervals", "hawkes_flags", "hessian_std_errors",
    "intensity_surface", "log_likelihood", "log_likelihood_gradient",
    "log_posterior", "log_prior", "naive_flags", "parse_events",
    "poisson_quantile", "posterior_predictive", "read_grid",
    "sample_posterior", "set_warmup", "simulate_forward", "spatial_distance",
    "spatial_risk_map", "spatial_weight", "split_rhat", "summarize",
    "temporal_pmf", "write_grid",
]
