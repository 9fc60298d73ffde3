"""Monte Carlo estimators for the model's boundedness and stability claims.

Every estimator is a deterministic map-reduce over independent paths: the
chunk partition, per-chunk pairwise sums, and the compensated fold over
chunks are all fixed by (params, grid, n_paths, seed), so results are
byte-stable across thread counts and reruns.

Estimator policy for pathological paths: overflow-aborted paths are
excluded and counted (``n_excluded``); negative iterates are kept, with
moments taken of |Y| and the negative fraction reported alongside.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .engine import advance_block, simulate_ensemble
from .model import ModelParams, ParameterError, drift_with_floor, moment_hypotheses_ok
from .noise import SimGrid, jump_time_rng, n_blocks, noise_block_matrix
from .stats import (
    EstimateWithCI,
    chunked_map,
    mean_from_sums,
    neumaier_sum,
    proportion_with_ci,
)


class RegimeWarning(UserWarning):
    """An estimator ran outside the parameter regime its bound assumes."""


class AllPathsAbortedError(RuntimeError):
    """Every path overflowed; the estimate is undefined."""


# ---------------------------------------------------------------------------
# moment curves and time averages


@dataclass(frozen=True)
class MomentCurve:
    """Per-node estimates of E|Y(t)|^p along the grid.

    Moments are taken of the absolute value; ``negative_fraction`` reports
    how many included paths ever went negative (the bias source for the
    absolute-value convention).
    """

    p: float
    times: np.ndarray
    estimates: list[EstimateWithCI]
    negative_fraction: float
    n_excluded: int

    def points(self) -> np.ndarray:
        return np.array([e.point for e in self.estimates])

    def std_errors(self) -> np.ndarray:
        return np.array([e.std_error for e in self.estimates])


def _warn_if_outside_regime(params: ModelParams, p: float) -> None:
    ok = moment_hypotheses_ok(params, p)
    if ok is False:
        if p >= 2.0:
            msg = (
                f"moment bound for p={p} needs 2*rho < gamma+1, or "
                f"2*rho == gamma+1 with a2 > (p-1)*sigma^2/2; "
                f"got rho={params.rho}, gamma={params.gamma}"
            )
        else:
            msg = (
                f"inverse moment bound for p={p} needs 2*rho <= gamma+1 and "
                f"gamma <= {abs(p) + 1}; got rho={params.rho}, gamma={params.gamma}"
            )
        warnings.warn(msg, RegimeWarning, stacklevel=3)


def moment_curve(
    params: ModelParams,
    p: float,
    grid: SimGrid,
    n_paths: int,
    seed: int,
    threads: int = 1,
) -> MomentCurve:
    """Estimate E|Y(t)|^p at every grid node.

    Warns (does not fail) when the moment-bound hypotheses are violated;
    the estimator is still computable.
    """
    if n_paths < 1:
        raise ParameterError("n_paths must be positive")
    _warn_if_outside_regime(params, p)
    n_nodes = grid.n_steps + 1

    def worker(lo: int, hi: int):
        block = simulate_ensemble(params, grid, seed, lo, hi)
        inc = block.included
        vals = np.abs(block.values[inc]) ** p
        return (
            vals.sum(axis=0),
            (vals * vals).sum(axis=0),
            int(np.count_nonzero(inc)),
            int(np.count_nonzero(block.negative_any[inc])),
        )

    parts = chunked_map(worker, n_paths, threads=threads)
    n_inc = sum(part[2] for part in parts)
    if n_inc == 0:
        raise AllPathsAbortedError("all paths overflowed")
    n_neg = sum(part[3] for part in parts)
    estimates = []
    for node in range(n_nodes):
        total = neumaier_sum(part[0][node] for part in parts)
        total_sq = neumaier_sum(part[1][node] for part in parts)
        estimates.append(mean_from_sums(total, total_sq, n_inc, n_paths - n_inc))
    return MomentCurve(
        p=p,
        times=grid.node_times(),
        estimates=estimates,
        negative_fraction=n_neg / n_inc,
        n_excluded=n_paths - n_inc,
    )


def time_avg_moment(
    params: ModelParams,
    exponents,
    grid: SimGrid,
    n_paths: int,
    seed: int,
    threads: int = 1,
) -> EstimateWithCI:
    """Trapezoidal time average of sum_e E|Y(t)|^e over [0, horizon].

    ``exponents`` may be a single float or a sequence (the paired form
    (-2, 2) feeds the time-averaged second-moment check).  Computed per
    path, then averaged, so the point estimate is linear in the exponent
    list up to rounding.
    """
    exps = [float(exponents)] if np.isscalar(exponents) else [float(e) for e in exponents]
    for e in exps:
        _warn_if_outside_regime(params, e)
    weights = np.full(grid.n_steps + 1, grid.dt)
    weights[0] = weights[-1] = grid.dt / 2.0
    weights /= grid.horizon

    def worker(lo: int, hi: int):
        block = simulate_ensemble(params, grid, seed, lo, hi)
        inc = block.included
        vals = np.abs(block.values[inc])
        per_path = np.zeros(int(np.count_nonzero(inc)))
        for e in exps:
            per_path = per_path + (vals**e) @ weights
        return float(per_path.sum()), float((per_path * per_path).sum()), per_path.size

    parts = chunked_map(worker, n_paths, threads=threads)
    n_inc = sum(part[2] for part in parts)
    if n_inc == 0:
        raise AllPathsAbortedError("all paths overflowed")
    total = neumaier_sum(part[0] for part in parts)
    total_sq = neumaier_sum(part[1] for part in parts)
    return mean_from_sums(total, total_sq, n_inc, n_paths - n_inc)


# ---------------------------------------------------------------------------
# interval occupancy


def occupancy_probability(
    params: ModelParams,
    grid: SimGrid,
    n_paths: int,
    seed: int,
    n1: float,
    threads: int = 1,
) -> EstimateWithCI:
    """Fraction of paths whose terminal value lies inside (1/n1, n1)."""
    if n1 <= 1.0:
        raise ParameterError(f"n1 must be > 1, got {n1}")

    def worker(lo: int, hi: int):
        block = simulate_ensemble(params, grid, seed, lo, hi)
        terminal = block.values[block.included, -1]
        inside = np.count_nonzero((terminal > 1.0 / n1) & (terminal < n1))
        return int(inside), terminal.size

    parts = chunked_map(worker, n_paths, threads=threads)
    n_inc = sum(part[1] for part in parts)
    if n_inc == 0:
        raise AllPathsAbortedError("all paths overflowed")
    hits = sum(part[0] for part in parts)
    return proportion_with_ci(hits, n_inc, n_paths - n_inc)


def find_occupancy_level(
    params: ModelParams,
    grid: SimGrid,
    n_paths: int,
    seed: int,
    eps: float = 0.01,
    n1_start: float = 2.0,
    max_doublings: int = 40,
    threads: int = 1,
) -> tuple[float, EstimateWithCI]:
    """Doubling search for a finite n1 with occupancy >= 1 - eps.

    The occupancy events are nested in n1, so the probability is
    nondecreasing and the search terminates whenever a suitable interval
    exists at this sample size.
    """
    if not 0.0 < eps < 1.0:
        raise ParameterError(f"eps must be in (0,1), got {eps}")
    n1 = n1_start
    for _ in range(max_doublings):
        est = occupancy_probability(params, grid, n_paths, seed, n1, threads=threads)
        if est.point >= 1.0 - eps:
            return n1, est
        n1 *= 2.0
    raise RuntimeError(
        f"no n1 <= {n1 / 2:.3g} reaches occupancy {1 - eps}; ensemble may be degenerate"
    )


# ---------------------------------------------------------------------------
# pathwise log asymptotics


@dataclass(frozen=True)
class LogRatioSummary:
    """Distribution of log Y(t) / log t over paths and decade sample times.

    Samples with nonpositive iterates are excluded pointwise and counted;
    overflow-aborted paths are dropped entirely.
    """

    sample_times: np.ndarray
    band_halfwidth: float
    fraction_in_band: float
    fraction_in_band_per_time: np.ndarray
    n_samples: int
    n_excluded_samples: int
    n_aborted_paths: int


def pathwise_log_ratio(
    params: ModelParams,
    t_large: float,
    n_paths: int,
    seed: int,
    dt: float = 0.01,
    eps_band: float = 0.3,
    threads: int = 1,
) -> LogRatioSummary:
    """Sample log Y(t)/log t at t in {10, 20, ...} up to the horizon.

    The pathwise bounds are t -> infinity statements; the acceptance band
    [-(1+eps_band), 1+eps_band] and the decade sample times are desk-scale
    calibration choices.
    """
    if t_large < 50.0:
        raise ParameterError(f"t_large must be >= 50, got {t_large}")
    grid = SimGrid.from_dt(t_large, dt)
    sample_times = np.arange(10.0, t_large + dt / 2.0, 10.0)
    sample_nodes = np.round(sample_times / grid.dt).astype(np.int64)
    band = 1.0 + eps_band
    log_t = np.log(sample_times)

    def worker(lo: int, hi: int):
        m = hi - lo
        y = np.full(m, params.y0)
        alive = np.ones(m, dtype=bool)
        samples = np.empty((m, sample_nodes.size))
        next_sample = 0
        for block in range(n_blocks(grid)):
            blo, bhi, db, dn = noise_block_matrix(grid, params.lam, seed, lo, hi, block)
            out = np.empty_like(db)
            y, alive = advance_block(params, grid.dt, y, alive, db, dn, out_values=out)
            while next_sample < sample_nodes.size and sample_nodes[next_sample] <= bhi:
                samples[:, next_sample] = out[:, sample_nodes[next_sample] - blo - 1]
                next_sample += 1
        inc = alive  # surviving = never aborted
        vals = samples[inc]
        positive = vals > 0.0
        ratios = np.where(positive, np.log(np.where(positive, vals, 1.0)) / log_t, 0.0)
        in_band = positive & (np.abs(ratios) <= band)
        return (
            in_band.sum(axis=0).astype(np.int64),
            positive.sum(axis=0).astype(np.int64),
            int(np.count_nonzero(inc)),
        )

    parts = chunked_map(worker, n_paths, threads=threads)
    n_inc = sum(part[2] for part in parts)
    if n_inc == 0:
        raise AllPathsAbortedError("all paths overflowed")
    in_band = np.sum([part[0] for part in parts], axis=0)
    valid = np.sum([part[1] for part in parts], axis=0)
    total_slots = n_inc * sample_nodes.size
    n_valid = int(valid.sum())
    per_time = np.divide(
        in_band, valid, out=np.zeros(valid.size, dtype=np.float64), where=valid > 0
    )
    return LogRatioSummary(
        sample_times=sample_times,
        band_halfwidth=band,
        fraction_in_band=float(in_band.sum()) / n_valid if n_valid else 0.0,
        fraction_in_band_per_time=per_time,
        n_samples=n_valid,
        n_excluded_samples=total_slots - n_valid,
        n_aborted_paths=n_paths - n_inc,
    )


# ---------------------------------------------------------------------------
# Poisson stochastic-integral inequality margins


@dataclass(frozen=True)
class InequalityCheck:
    """One inequality margin: passes when lhs <= rhs + 3 * std_error."""

    name: str
    integrand: str
    lhs: float
    rhs: float
    std_error: float

    @property
    def margin(self) -> float:
        return self.rhs + 3.0 * self.std_error - self.lhs

    @property
    def ok(self) -> bool:
        return self.margin >= 0.0

    def to_record(self) -> dict:
        return {
            "name": self.name,
            "integrand": self.integrand,
            "lhs": self.lhs,
            "rhs": self.rhs,
            "std_error": self.std_error,
            "margin": self.margin,
            "ok": self.ok,
        }


@dataclass(frozen=True)
class JumpInequalityReport:
    lam: float
    horizon: float
    n_paths: int
    checks: list[InequalityCheck]

    @property
    def all_ok(self) -> bool:
        return all(c.ok for c in self.checks)


def _sup_abs_candidates(prefix: np.ndarray, before: np.ndarray, terminal: np.ndarray):
    """Max |M| over a per-path candidate set, row-wise."""
    sup = np.abs(terminal)
    if prefix.shape[1]:
        sup = np.maximum(sup, np.abs(prefix).max(axis=1))
        sup = np.maximum(sup, np.abs(before).max(axis=1))
    return sup


def poisson_integral_inequality_check(
    lam: float,
    horizon: float,
    n_paths: int,
    seed: int,
    threads: int = 1,
) -> JumpInequalityReport:
    """Monte Carlo margins for three jump-integral second-moment bounds.

    Checked for integrands h == 1 and h(s) == s against the analytic
    right-hand sides

        E |int_0^T h dN|^2              <= 2*lam*(1+lam*T) * int_0^T h^2,
        E sup_t |int_0^t h d(N - lam s)|^2 <= 4*lam * int_0^T h^2,
        E sup_t |int_0^t h dN|^2        <= (8*lam + 2*lam*T^2) * int_0^T h^2.

    Jump times are sampled exactly (uniform order statistics given the
    count), and the suprema are evaluated at their exact extreme points:
    between jumps the compensated integral only decreases, so per path the
    candidates are the values just before / after each jump and at the
    endpoints.
    """
    if lam < 0 or horizon <= 0:
        raise ParameterError("need lam >= 0 and horizon > 0")
    t_end = float(horizon)
    int_h2 = {"1": t_end, "s": t_end**3 / 3.0}
    rhs_scale = {
        "plain_second_moment": 2.0 * lam * (1.0 + lam * t_end),
        "sup_compensated": 4.0 * lam,
        "sup_raw": 8.0 * lam + 2.0 * lam * t_end**2,
    }

    def worker(lo: int, hi: int):
        m = hi - lo
        rng = jump_time_rng(seed, lo)
        counts = rng.poisson(lam * t_end, m)
        kmax = int(counts.max()) if m else 0
        # padded jump-time matrix; padding at t_end contributes duplicate
        # endpoint candidates and zero padded h-values
        taus = np.full((m, max(kmax, 1)), t_end)
        mask = np.zeros((m, max(kmax, 1)), dtype=bool)
        if kmax > 0:
            u = rng.random((m, kmax)) * t_end
            mask[:, :kmax] = np.arange(kmax) < counts[:, None]
            # push unused draws past the horizon before sorting, so each
            # path's jump times are the order statistics of its own sample
            u = np.where(mask[:, :kmax], u, np.inf)
            u.sort(axis=1)
            taus[:, :kmax] = np.where(mask[:, :kmax], u, t_end)
        sums = {}
        for name, h_of_tau, comp_at in (
            ("1", np.where(mask, 1.0, 0.0), lambda t: lam * t),
            ("s", np.where(mask, taus, 0.0), lambda t: lam * t * t / 2.0),
        ):
            prefix = np.cumsum(h_of_tau, axis=1)
            terminal_sum = prefix[:, -1] if kmax > 0 else np.zeros(m)
            # plain and raw-sup statistics coincide for nonnegative h:
            # the raw integral is nondecreasing, so its sup sits at T
            plain = terminal_sum**2
            comp_after = np.where(mask, prefix - comp_at(taus), 0.0)
            comp_before = np.where(mask, prefix - h_of_tau - comp_at(taus), 0.0)
            comp_terminal = terminal_sum - comp_at(t_end)
            sup_comp = _sup_abs_candidates(comp_after, comp_before, comp_terminal) ** 2
            for key, stat in (
                (("plain_second_moment", name), plain),
                (("sup_compensated", name), sup_comp),
                (("sup_raw", name), plain),
            ):
                sums[key] = (float(stat.sum()), float((stat * stat).sum()))
        return sums

    parts = chunked_map(worker, n_paths, threads=threads, chunk=65536)
    checks = []
    for ineq in ("plain_second_moment", "sup_compensated", "sup_raw"):
        for h in ("1", "s"):
            total = neumaier_sum(part[(ineq, h)][0] for part in parts)
            total_sq = neumaier_sum(part[(ineq, h)][1] for part in parts)
            est = mean_from_sums(total, total_sq, n_paths)
            checks.append(
                InequalityCheck(
                    name=ineq,
                    integrand=h,
                    lhs=est.point,
                    rhs=rhs_scale[ineq] * int_h2[h],
                    std_error=est.std_error,
                )
            )
    return JumpInequalityReport(lam=lam, horizon=t_end, n_paths=n_paths, checks=checks)


# ---------------------------------------------------------------------------
# convergence in probability (coupled step-size ladder)


@dataclass(frozen=True)
class ConvergenceReport:
    """Exceedance probabilities of the coupled sup-squared error per level.

    ``exceedance`` estimates P(sup_t |Y_ref(t) - Ybar_level(t)|^2 >= xi)
    with the true solution proxied by the fine reference path driven by the
    identical noise.  ``interpolant_gap`` is the per-level mean of
    sup_t |Y_level(t) - Ybar_level(t)|^2, the continuous-vs-step interpolant
    distance.  Suprema are evaluated at reference-grid nodes, which is exact
    for the piecewise-constant comparisons.
    """

    xi: float
    dt_levels: list[float]
    ref_dt: float
    exceedance: list[EstimateWithCI]
    interpolant_gap: list[EstimateWithCI]
    monotone_ok: bool
    n_excluded: int

    def to_record(self) -> dict:
        return {
            "xi": self.xi,
            "dt_levels": list(self.dt_levels),
            "ref_dt": self.ref_dt,
            "exceedance": [e.to_record() for e in self.exceedance],
            "interpolant_gap": [e.to_record() for e in self.interpolant_gap],
            "monotone_ok": self.monotone_ok,
            "n_excluded": self.n_excluded,
        }


def _nonincreasing_up_to_one_ci(estimates: list[EstimateWithCI]) -> bool:
    violations = 0
    for a, b in zip(estimates, estimates[1:]):
        slack = max(a.ci_high - a.point, b.ci_high - b.point)
        if b.point > a.point + slack:
            violations += 1
    return violations <= 1


class _LevelState:
    """Streaming state for one ladder level of one path chunk."""

    def __init__(self, m: int, y0: float, dt: float, factor: int):
        self.dt = dt
        self.factor = factor
        self.y = np.full(m, y0)
        self.alive = np.ones(m, dtype=bool)
        self.b_start = np.zeros(m)
        self.n_start = np.zeros(m, dtype=np.int64)
        self.max_err = np.zeros(m)
        self.max_gap = np.zeros(m)


def convergence_in_probability(
    params: ModelParams,
    horizon: float,
    xi: float,
    dt_levels,
    n_paths: int,
    seed: int,
    ref_refine: int = 256,
    threads: int = 1,
) -> ConvergenceReport:
    """Coupled exceedance ladder for the sup-squared EM error.

    All levels and the reference (step ``min(dt_levels) / ref_refine``) are
    driven by one fine noise ensemble; each level consumes exactly the
    coarsened increments of that ensemble, so the comparison is pathwise.
    Rejects ladders that do not nest into the reference grid.
    """
    if not 0.0 < xi < 1.0:
        raise ParameterError(f"xi must be in (0,1), got {xi}")
    dts = [float(d) for d in dt_levels]
    if len(dts) < 1 or any(b >= a for a, b in zip(dts, dts[1:])):
        raise ParameterError("dt_levels must be strictly descending")
    ref_grid = SimGrid.from_dt(horizon, min(dts) / ref_refine)
    n_ref = ref_grid.n_steps
    factors = []
    for d in dts:
        steps = round(horizon / d)
        if steps < 1 or abs(steps * d - horizon) > 1e-9 * horizon or n_ref % steps != 0:
            raise ParameterError(f"level dt={d} does not nest into the reference grid")
        factors.append(n_ref // steps)
    dt_ref = ref_grid.dt

    def worker(lo: int, hi: int):
        m = hi - lo
        y_ref = np.full(m, params.y0)
        alive_ref = np.ones(m, dtype=bool)
        carry_b = np.zeros(m)
        carry_n = np.zeros(m, dtype=np.int64)
        levels = [_LevelState(m, params.y0, d, f) for d, f in zip(dts, factors)]
        for block in range(n_blocks(ref_grid)):
            k0, k1, db, dn = noise_block_matrix(ref_grid, params.lam, seed, lo, hi, block)
            span = k1 - k0
            # node-anchored cumulatives; bitwise identical to the stored
            # b_nodes/n_nodes of generate_noise for these paths
            cum_b = carry_b[:, None] + np.cumsum(db, axis=1)
            cum_n = carry_n[:, None] + np.cumsum(dn, axis=1)
            ref_vals = np.empty((m, span))
            y_ref, alive_ref = advance_block(
                params, dt_ref, y_ref, alive_ref, db, dn, out_values=ref_vals
            )
            g = np.arange(k0, k1)
            for lv in levels:
                f = lv.factor
                c_first = k0 // f
                n_complete = k1 // f - c_first
                node_vals = [lv.y]
                bounds_b = [lv.b_start]
                bounds_n = [lv.n_start]
                y_lv, alive_lv = lv.y, lv.alive
                for s in range(n_complete):
                    col = (c_first + s + 1) * f - k0 - 1
                    b_end = cum_b[:, col]
                    n_end = cum_n[:, col]
                    y_lv, alive_lv = advance_block(
                        params,
                        lv.dt,
                        y_lv,
                        alive_lv,
                        (b_end - bounds_b[-1])[:, None],
                        (n_end - bounds_n[-1])[:, None],
                    )
                    node_vals.append(y_lv)
                    bounds_b.append(b_end)
                    bounds_n.append(n_end)
                lv.y, lv.alive = y_lv, alive_lv
                lv.b_start, lv.n_start = bounds_b[-1], bounds_n[-1]
                node_lookup = np.stack(node_vals, axis=1)
                step_idx = (g + 1) // f - c_first
                ybar = node_lookup[:, step_idx]
                err = (ref_vals - ybar) ** 2
                lv.max_err = np.maximum(lv.max_err, err.max(axis=1))
                # continuous-vs-step gap inside each held step, at fine nodes
                c_idx = g // f - c_first
                y_c = node_lookup[:, c_idx]
                drift_nodes, _ = drift_with_floor(params, node_lookup)
                drift_c = drift_nodes[:, c_idx]
                b_c = np.stack(bounds_b, axis=1)[:, c_idx]
                n_c = np.stack(bounds_n, axis=1)[:, c_idx]
                tau = ((g % f) + 1) * dt_ref
                gap = (
                    drift_c * tau
                    + params.sigma * np.abs(y_c) ** params.rho * (cum_b - b_c)
                    + params.delta * y_c * (cum_n - n_c)
                )
                gap_sq = gap * gap
                gap_sq[:, (g + 1) % f == 0] = 0.0
                lv.max_gap = np.maximum(lv.max_gap, gap_sq.max(axis=1))
            carry_b = cum_b[:, -1]
            carry_n = cum_n[:, -1]
        included = alive_ref.copy()
        for lv in levels:
            included &= lv.alive
        out = []
        for lv in levels:
            exceed = int(np.count_nonzero(lv.max_err[included] >= xi))
            gap_inc = lv.max_gap[included]
            out.append((exceed, float(gap_inc.sum()), float((gap_inc * gap_inc).sum())))
        return out, int(np.count_nonzero(included))

    parts = chunked_map(worker, n_paths, threads=threads, chunk=256)
    n_inc = sum(part[1] for part in parts)
    if n_inc == 0:
        raise AllPathsAbortedError("all paths overflowed")
    n_excluded = n_paths - n_inc
    exceedance = []
    gaps = []
    for j in range(len(dts)):
        hits = sum(part[0][j][0] for part in parts)
        exceedance.append(proportion_with_ci(hits, n_inc, n_excluded))
        total = neumaier_sum(part[0][j][1] for part in parts)
        total_sq = neumaier_sum(part[0][j][2] for part in parts)
        gaps.append(mean_from_sums(total, total_sq, n_inc, n_excluded))
    return ConvergenceReport(
        xi=xi,
        dt_levels=dts,
        ref_dt=dt_ref,
        exceedance=exceedance,
        interpolant_gap=gaps,
        monotone_ok=_nonincreasing_up_to_one_ci(exceedance),
        n_excluded=n_excluded,
    )
