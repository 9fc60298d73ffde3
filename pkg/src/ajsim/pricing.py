"""Monte Carlo bond and barrier-option prices from EM path ensembles.

Both payoffs read the piecewise-constant path extension, so all integrals
and barrier checks reduce to exact node arithmetic:

* bond: discount factor exp(-dt * sum |Y_n|) over left endpoints;
* up-and-out call: (Y(T) - strike)^+ times the indicator that every node
  value lies in [0, barrier].

Barrier monitoring is therefore discrete at grid nodes; it understates
knock-outs of the underlying continuous path, a bias that shrinks with dt.
Payoffs are undiscounted by design; composing them with the bond machinery
is a one-line user exercise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .engine import EnsembleBlock, simulate_ensemble
from .estimators import AllPathsAbortedError
from .model import ModelParams, ParameterError
from .noise import SimGrid
from .stats import EstimateWithCI, chunked_map, mean_from_sums, neumaier_sum


@dataclass(frozen=True)
class BondSpec:
    """Zero-coupon bond paying 1 at maturity."""

    maturity: float

    def __post_init__(self):
        if not math.isfinite(self.maturity) or self.maturity <= 0:
            raise ParameterError(f"maturity must be > 0, got {self.maturity}")


@dataclass(frozen=True)
class BarrierOptionSpec:
    """Up-and-out call: knocked out once the path leaves [0, barrier]."""

    strike: float
    barrier: float
    maturity: float

    def __post_init__(self):
        if not math.isfinite(self.strike) or self.strike <= 0:
            raise ParameterError(f"strike must be > 0, got {self.strike}")
        if not math.isfinite(self.barrier) or self.barrier <= 0:
            raise ParameterError(f"barrier must be > 0, got {self.barrier}")
        if not math.isfinite(self.maturity) or self.maturity <= 0:
            raise ParameterError(f"maturity must be > 0, got {self.maturity}")


def bond_discount_factors(values: np.ndarray, dt: float) -> np.ndarray:
    """exp(-dt * sum_n |Y_n|) per path, summed over left endpoints."""
    integral = dt * np.sum(np.abs(values[:, :-1]), axis=1)
    return np.exp(-integral)


def barrier_payoffs(values: np.ndarray, spec: BarrierOptionSpec) -> np.ndarray:
    """Per-path payoff (Y_T - strike)^+ * 1{0 <= Y_n <= barrier for all n}.

    The lower bound 0 is enforced literally: a negative node knocks the
    option out.
    """
    alive = np.all((values >= 0.0) & (values <= spec.barrier), axis=1)
    return np.where(alive, np.maximum(values[:, -1] - spec.strike, 0.0), 0.0)


def _check_horizon(grid: SimGrid, maturity: float) -> None:
    if abs(grid.horizon - maturity) > 1e-12 * max(1.0, maturity):
        raise ParameterError(
            f"grid horizon {grid.horizon} must equal the maturity {maturity}"
        )


def _price(per_path_fn, aborted_contribute_zero: bool):
    def run(params, grid, n_paths, seed, threads):
        def worker(lo: int, hi: int):
            block: EnsembleBlock = simulate_ensemble(params, grid, seed, lo, hi)
            if aborted_contribute_zero:
                vals = per_path_fn(block.values)
                vals = np.where(block.included, vals, 0.0)
                n_used = block.n_paths
                n_aborted = int(np.count_nonzero(block.aborted))
            else:
                vals = per_path_fn(block.values[block.included])
                n_used = vals.size
                n_aborted = block.n_paths - n_used
            return float(vals.sum()), float((vals * vals).sum()), n_used, n_aborted

        parts = chunked_map(worker, n_paths, threads=threads)
        n_used = sum(p[2] for p in parts)
        n_aborted = sum(p[3] for p in parts)
        if n_used == 0 or n_aborted == n_paths:
            raise AllPathsAbortedError("all paths overflowed")
        total = neumaier_sum(p[0] for p in parts)
        total_sq = neumaier_sum(p[1] for p in parts)
        return mean_from_sums(total, total_sq, n_used, n_aborted)

    return run


def bond_price(
    params: ModelParams,
    spec: BondSpec,
    grid: SimGrid,
    n_paths: int,
    seed: int,
    threads: int = 1,
) -> EstimateWithCI:
    """Mean discount factor over the ensemble; always in (0, 1].

    Overflow-aborted paths are excluded and counted.
    """
    _check_horizon(grid, spec.maturity)
    runner = _price(lambda vals: bond_discount_factors(vals, grid.dt), False)
    return runner(params, grid, n_paths, seed, threads)


def barrier_option_price(
    params: ModelParams,
    spec: BarrierOptionSpec,
    grid: SimGrid,
    n_paths: int,
    seed: int,
    threads: int = 1,
) -> EstimateWithCI:
    """Mean up-and-out call payoff over the ensemble.

    Overflow-aborted paths contribute zero (they left any finite barrier)
    and are counted in ``n_excluded``.
    """
    _check_horizon(grid, spec.maturity)
    runner = _price(lambda vals: barrier_payoffs(vals, spec), True)
    return runner(params, grid, n_paths, seed, threads)
