"""Monte Carlo summary statistics and deterministic reductions.

Every ensemble reduction in this package follows the same recipe: paths are
split into fixed-size chunks (the partition depends only on the path count,
never on the worker count), each chunk produces partial sums via numpy's
pairwise summation, and the partials are folded in chunk order with
compensated (Neumaier) summation.  Worker threads therefore change wall time
only; the output bytes are identical for any thread count.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

# two-sided 95% normal quantile
Z95 = 1.959963984540054

#: paths per work chunk; fixed so the partition is independent of threading
DEFAULT_CHUNK = 2048


@dataclass(frozen=True)
class EstimateWithCI:
    """Monte Carlo point estimate with a 95% confidence interval.

    ``n_excluded`` counts paths dropped by the estimator policy (overflow
    aborts); they are not part of ``n_paths``' effective sample.
    """

    point: float
    std_error: float
    ci_low: float
    ci_high: float
    n_paths: int
    n_excluded: int = 0

    def __post_init__(self):
        if self.std_error < 0:
            raise ValueError("std_error must be nonnegative")
        if not (self.ci_low <= self.point <= self.ci_high) and math.isfinite(self.point):
            raise ValueError("confidence interval must bracket the point estimate")

    def to_record(self) -> dict:
        return {
            "point": float(self.point),
            "std_error": float(self.std_error),
            "ci_low": float(self.ci_low),
            "ci_high": float(self.ci_high),
            "n_paths": int(self.n_paths),
            "n_excluded": int(self.n_excluded),
        }


def neumaier_sum(values) -> float:
    """Sequentially sum ``values`` with Neumaier's compensated algorithm."""
    total = 0.0
    comp = 0.0
    for v in values:
        v = float(v)
        t = total + v
        if abs(total) >= abs(v):
            comp += (total - t) + v
        else:
            comp += (v - t) + total
        total = t
    return total + comp


def mean_from_sums(total: float, total_sq: float, n: int, n_excluded: int = 0) -> EstimateWithCI:
    """Build an estimate from compensated sums of X and X^2 over n samples."""
    if n <= 0:
        raise ValueError("need at least one sample")
    mean = total / n
    var = max(total_sq / n - mean * mean, 0.0)
    se = math.sqrt(var / n)
    return EstimateWithCI(
        point=mean,
        std_error=se,
        ci_low=mean - Z95 * se,
        ci_high=mean + Z95 * se,
        n_paths=n,
        n_excluded=n_excluded,
    )


def mean_with_ci(samples: np.ndarray, n_excluded: int = 0) -> EstimateWithCI:
    samples = np.asarray(samples, dtype=np.float64)
    return mean_from_sums(
        float(np.sum(samples)), float(np.sum(samples * samples)), samples.size, n_excluded
    )


def proportion_with_ci(successes: int, n: int, n_excluded: int = 0) -> EstimateWithCI:
    """Binomial proportion estimate.

    Uses the normal approximation, switching to a Wilson interval when either
    outcome count is below 10 (small-count accuracy).
    """
    if n <= 0:
        raise ValueError("need at least one sample")
    p = successes / n
    se = math.sqrt(p * (1.0 - p) / n)
    if min(successes, n - successes) < 10:
        lo, hi = wilson_interval(successes, n)
    else:
        lo, hi = p - Z95 * se, p + Z95 * se
    return EstimateWithCI(
        point=p,
        std_error=se,
        ci_low=min(lo, p),
        ci_high=max(hi, p),
        n_paths=n,
        n_excluded=n_excluded,
    )


def wilson_interval(successes: int, n: int) -> tuple[float, float]:
    """95% Wilson score interval for a binomial proportion."""
    if n <= 0:
        raise ValueError("need at least one sample")
    z2 = Z95 * Z95
    p = successes / n
    denom = 1.0 + z2 / n
    center = (p + z2 / (2.0 * n)) / denom
    half = (Z95 / denom) * math.sqrt(p * (1.0 - p) / n + z2 / (4.0 * n * n))
    return max(0.0, center - half), min(1.0, center + half)


def chunk_ranges(n_paths: int, chunk: int = DEFAULT_CHUNK) -> list[tuple[int, int]]:
    """Fixed partition of [0, n_paths) into contiguous chunks."""
    if n_paths <= 0:
        raise ValueError("n_paths must be positive")
    return [(lo, min(lo + chunk, n_paths)) for lo in range(0, n_paths, chunk)]


def chunked_map(fn, n_paths: int, threads: int = 1, chunk: int = DEFAULT_CHUNK) -> list:
    """Apply ``fn(lo, hi)`` to every chunk and return results in chunk order.

    The chunk partition and the result order never depend on ``threads``.
    """
    ranges = chunk_ranges(n_paths, chunk)
    if threads <= 1 or len(ranges) == 1:
        return [fn(lo, hi) for lo, hi in ranges]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        futures = [pool.submit(fn, lo, hi) for lo, hi in ranges]
        return [f.result() for f in futures]
