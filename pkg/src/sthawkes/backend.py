"""Hot numeric kernels with a numba fast path and a pure-numpy fallback.

The active implementation is chosen once at import time:

* ``STHAWKES_NUMBA=0`` (or ``off``/``false``/``no``) forces the numpy path.
* ``STHAWKES_NUMBA=1`` (or ``on``/``true``/``yes``) requires numba and raises
  if it cannot be imported.
* unset or ``auto``: numba if importable, numpy otherwise.

Both paths compute the same quantities; they may differ by a few ulp because
the summation order differs. Each path sums in a fixed order, so results are
reproducible run to run on a given backend.
"""

from __future__ import annotations

import math
import os

import numpy as np

_FLAG = os.environ.get("STHAWKES_NUMBA", "auto").strip().lower()
if _FLAG in ("0", "off", "false", "no"):
    _WANT_NUMBA = False
elif _FLAG in ("1", "on", "true", "yes"):
    _WANT_NUMBA = True
elif _FLAG in ("auto", ""):
    _WANT_NUMBA = None
else:
    raise ValueError(f"unrecognized STHAWKES_NUMBA value: {_FLAG!r}")

try:
    from numba import njit

    HAS_NUMBA = True
except ImportError:
    HAS_NUMBA = False
    if _WANT_NUMBA is True:
        raise

NUMBA_ENABLED = HAS_NUMBA if _WANT_NUMBA is None else (_WANT_NUMBA and HAS_NUMBA)


def backend_name() -> str:
    return "numba" if NUMBA_ENABLED else "numpy"


# ---------------------------------------------------------------------------
# Pure-numpy implementations

def excitation_matrix_numpy(counts: np.ndarray, g: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Lag-weighted spatially smoothed history sums.

    out[t, r] = sum_{s=1..min(t, L)} g[s-1] * sum_{r'} counts[t-s, r'] * w[r', r]

    counts: (T, R) float array of past event counts (row t = month t).
    g: (L,) temporal kernel mass at lags 1..L.
    w: (R, R) symmetric spatial weight matrix.

    The lag-weighted history is accumulated first and multiplied by ``w``
    once, so the cost is O(T*L*R + T*R^2) rather than O(T*L*R^2).
    """
    T, R = counts.shape
    L = g.shape[0]
    lagged = np.zeros((T, R))
    for s in range(1, min(L, T) + 1):
        lagged[s:] += g[s - 1] * counts[: T - s]
    return lagged @ w


def poisson_loglik_sum_numpy(y: np.ndarray, lam: np.ndarray, warmup: int) -> float:
    """Sum of Poisson log-pmf terms ``y*ln(lam) - lam - ln(y!)`` over rows >= warmup.

    Cells with lam == 0 contribute 0 when y == 0 and force the result to
    -inf when y > 0.
    """
    from scipy.special import gammaln

    y = y[warmup:]
    lam = lam[warmup:]
    if np.any((lam == 0.0) & (y > 0)):
        return float("-inf")
    logterm = np.zeros_like(lam)
    pos = lam > 0.0
    np.log(lam, out=logterm, where=pos)
    return float(np.sum(y * logterm - lam - gammaln(y + 1.0)))


# ---------------------------------------------------------------------------
# Numba implementations (same contracts, explicit loops)

if HAS_NUMBA:

    @njit(cache=True)
    def _excitation_matrix_numba(counts, g, w):
        # two-phase contraction mirroring the numpy path: O(T*L*R) lag
        # accumulation, then one (T,R)x(R,R) product instead of redoing the
        # temporal sum per target region
        T, R = counts.shape
        L = g.shape[0]
        lagged = np.zeros((T, R))
        for t in range(T):
            smax = min(t, L)
            for s in range(1, smax + 1):
                gs = g[s - 1]
                for rp in range(R):
                    lagged[t, rp] += gs * counts[t - s, rp]
        return np.dot(lagged, w)

    @njit(cache=True)
    def _poisson_loglik_sum_numba(y, lam, warmup):
        T, R = y.shape
        total = 0.0
        for t in range(warmup, T):
            for r in range(R):
                lv = lam[t, r]
                yv = y[t, r]
                if lv == 0.0:
                    if yv > 0.0:
                        return -np.inf
                    continue
                total += yv * math.log(lv) - lv - math.lgamma(yv + 1.0)
        return total

    def excitation_matrix_numba(counts: np.ndarray, g: np.ndarray, w: np.ndarray) -> np.ndarray:
        return _excitation_matrix_numba(counts, g, w)

    def poisson_loglik_sum_numba(y: np.ndarray, lam: np.ndarray, warmup: int) -> float:
        return float(_poisson_loglik_sum_numba(y, lam, warmup))

else:
    excitation_matrix_numba = None
    poisson_loglik_sum_numba = None


if NUMBA_ENABLED:
    excitation_matrix = excitation_matrix_numba
    poisson_loglik_sum = poisson_loglik_sum_numba
else:
    excitation_matrix = excitation_matrix_numpy
    poisson_loglik_sum = poisson_loglik_sum_numpy
