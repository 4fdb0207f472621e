"""Timing comparison of the numba and numpy numeric kernels.

Runs both implementations of the two hot kernels on a sweep of grid sizes
and prints a table of per-call times plus the speedup. The log-likelihood
row times the composed computation (excitation + weights + Poisson sum)
the way fitting code calls it.

Usage: python3 benchmarks/bench_backends.py [--repeats N]
"""

import argparse
import time

import numpy as np

from sthawkes import backend
from sthawkes.ingest import EventGrid, RegionSet, set_warmup
from sthawkes.intensity import ModelParams, log_likelihood
from sthawkes.kernels import SpatialKernel, build_weight_matrix, temporal_pmf


def best_of(fn, repeats: int) -> float:
    fn()  # warm caches / trigger jit compilation outside the clock
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def problem(T: int, R: int, seed: int = 7):
    rng = np.random.default_rng(seed)
    regions = RegionSet(ids=tuple(f"g{i}" for i in range(R)),
                        xy=rng.uniform(0.0, 30.0, size=(R, 2)))
    counts = rng.poisson(1.2, size=(T, R))
    grid = set_warmup(EventGrid(counts=counts, start_month="2010-01",
                                region_ids=regions.ids), 3)
    params = ModelParams(mu=0.5, alpha=0.5, beta=0.4, sigma=1.0, t_max=3)
    weights = build_weight_matrix(SpatialKernel(sigma=1.0), regions)
    return grid, params, weights


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=20,
                    help="timed calls per case; best-of is reported")
    args = ap.parse_args()

    if not backend.HAS_NUMBA:
        print("numba is not importable here: timing the numpy path only")

    sizes = [(60, 20), (120, 50), (240, 100), (480, 200)]
    header = (f"{'kernel':<22} {'T x R':>10} {'numpy':>12} "
              f"{'numba':>12} {'speedup':>8}")
    print(header)
    print("-" * len(header))

    for T, R in sizes:
        grid, params, weights = problem(T, R)
        counts_f = grid.counts.astype(np.float64)
        g = temporal_pmf(params.beta, params.t_max)
        lam = (params.mu
               + params.alpha
               * backend.excitation_matrix_numpy(counts_f, g, weights.w))
        y = counts_f

        cases = [
            ("excitation_matrix",
             lambda: backend.excitation_matrix_numpy(counts_f, g, weights.w),
             (lambda: backend.excitation_matrix_numba(counts_f, g, weights.w))
             if backend.HAS_NUMBA else None),
            ("poisson_loglik_sum",
             lambda: backend.poisson_loglik_sum_numpy(y, lam, grid.warmup),
             (lambda: backend.poisson_loglik_sum_numba(y, lam, grid.warmup))
             if backend.HAS_NUMBA else None),
        ]
        for name, numpy_fn, numba_fn in cases:
            t_np = best_of(numpy_fn, args.repeats)
            if numba_fn is None:
                print(f"{name:<22} {T:>5}x{R:<4} {t_np * 1e3:>10.3f}ms "
                      f"{'n/a':>12} {'n/a':>8}")
                continue
            t_nb = best_of(numba_fn, args.repeats)
            print(f"{name:<22} {T:>5}x{R:<4} {t_np * 1e3:>10.3f}ms "
                  f"{t_nb * 1e3:>10.3f}ms {t_np / t_nb:>7.1f}x")

        # composed likelihood under whichever backend is active
        t_ll = best_of(lambda: log_likelihood(params, grid, weights),
                       args.repeats)
        print(f"{'log_likelihood':<22} {T:>5}x{R:<4} "
              f"({backend.backend_name()} active) {t_ll * 1e3:>10.3f}ms")
        print()

    print("active backend:", backend.backend_name(),
          "(set STHAWKES_NUMBA=0/1 to force a path)")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
