"""Explicit Euler-Maruyama engine for the jump-extended short-rate model.

The discrete recursion is applied exactly as written, with no positivity
repair:

    Y_{n+1} = Y_n + f(Y_n)*dt + sigma*|Y_n|**rho * dB_n + delta*Y_n * dN_n.

Negative iterates are ordinary for this scheme and are logged, not fixed.
Three pathological events are recorded per path:

* ``negative_iterate`` - an iterate went negative;
* ``floor_clamp`` - the reciprocal drift argument was clamped at the floor;
* ``overflow_abort`` - |Y| exceeded ``OVERFLOW_LIMIT``; the path freezes at
  its last finite iterate and downstream estimators may exclude it.

Scalar stepping (:func:`em_step`, :func:`simulate_path`) and the vectorized
ensemble kernel (:func:`simulate_block`) share one floating-point expression,
so a path simulated alone is bit-identical to the same path inside a block.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field

import numpy as np

from .model import ModelParams, ParameterError, drift_with_floor
from .noise import DrivingNoise, SimGrid, bridge_rng, n_blocks, noise_block_matrix

#: iterates beyond this magnitude abort the path (explicit schemes on
#: superlinear drift can explode; estimators need a well-defined policy)
OVERFLOW_LIMIT = 1e100

EVENT_NEGATIVE = "negative_iterate"
EVENT_CLAMP = "floor_clamp"
EVENT_OVERFLOW = "overflow_abort"

_MAGIC_PATHS = b"AJP1"


@dataclass(frozen=True, eq=False)
class EmPath:
    """Discrete iterates Y_0..Y_n at the grid nodes plus the event log.

    ``events`` is a list of (node_index, kind) pairs; kinds are the module
    constants above.  After an overflow abort the remaining entries of
    ``values`` repeat the last finite iterate.
    """

    grid: SimGrid
    values: np.ndarray
    events: list[tuple[int, str]]
    params_used: ModelParams

    @property
    def aborted(self) -> bool:
        return any(kind == EVENT_OVERFLOW for _, kind in self.events)

    def event_nodes(self, kind: str) -> list[int]:
        return [node for node, k in self.events if k == kind]


@dataclass(eq=False)
class EnsembleBlock:
    """Vectorized simulation output for a contiguous range of paths.

    ``values`` has shape (n_paths, n_steps+1).  ``abort_node[i]`` is the node
    at which path i overflowed (-1 if it never did); values after that node
    are frozen.  ``negative_any`` marks paths with at least one negative
    iterate before abort, and ``clamp_steps`` counts floor clamps per path.
    """

    values: np.ndarray
    aborted: np.ndarray
    abort_node: np.ndarray
    negative_any: np.ndarray
    clamp_steps: np.ndarray

    @property
    def n_paths(self) -> int:
        return self.values.shape[0]

    @property
    def included(self) -> np.ndarray:
        return ~self.aborted


def _em_next(params: ModelParams, y, dt, d_brownian, d_poisson):
    """One recursion update; shared by scalar and vector callers."""
    drift, clamped = drift_with_floor(params, y)
    y = np.asarray(y, dtype=np.float64)
    diffusion = params.sigma * np.abs(y) ** params.rho
    jump = params.delta * y
    return y + drift * dt + diffusion * d_brownian + jump * d_poisson, clamped


def em_step(params: ModelParams, y: float, dt: float, d_brownian: float, d_poisson: int) -> float:
    """Advance one EM step from iterate y.

    No positivity enforcement.  When the reciprocal drift argument sits
    below the floor it is clamped to sign(y) * RECIPROCAL_FLOOR; callers that
    need the event use :func:`simulate_path`, which flags the step.
    """
    if not 0.0 < dt < 1.0:
        raise ParameterError(f"dt must be in (0, 1), got {dt}")
    y_next, _ = _em_next(params, float(y), float(dt), float(d_brownian), float(d_poisson))
    return float(y_next)


def simulate_path(params: ModelParams, noise: DrivingNoise) -> EmPath:
    """Run the recursion over the whole grid of one noise path.

    The noise must have been generated with the model's jump intensity;
    determinism is inherited from the noise object.
    """
    if noise.lam != params.lam:
        raise ParameterError(
            f"noise generated with lam={noise.lam}, model has lam={params.lam}"
        )
    grid = noise.grid
    values = np.empty(grid.n_steps + 1, dtype=np.float64)
    values[0] = params.y0
    events: list[tuple[int, str]] = []
    y = np.float64(params.y0)
    for n in range(grid.n_steps):
        y_next, clamped = _em_next(
            params, y, grid.dt, noise.brownian_increments[n], noise.poisson_increments[n]
        )
        y_next = np.float64(y_next)
        if bool(clamped):
            events.append((n, EVENT_CLAMP))
        if not np.isfinite(y_next):
            events.append((n + 1, EVENT_OVERFLOW))
            values[n + 1 :] = y
            return EmPath(grid=grid, values=values, events=events, params_used=params)
        values[n + 1] = y_next
        if y_next < 0.0:
            events.append((n + 1, EVENT_NEGATIVE))
        if abs(y_next) > OVERFLOW_LIMIT:
            events.append((n + 1, EVENT_OVERFLOW))
            values[n + 2 :] = y_next
            return EmPath(grid=grid, values=values, events=events, params_used=params)
        y = y_next
    return EmPath(grid=grid, values=values, events=events, params_used=params)


def simulate_block(
    params: ModelParams, grid: SimGrid, d_brownian: np.ndarray, d_poisson: np.ndarray
) -> EnsembleBlock:
    """Vectorized recursion over a block of paths given increment matrices."""
    m, n = d_brownian.shape
    if d_poisson.shape != (m, n) or n != grid.n_steps:
        raise ParameterError("increment matrices must be (n_paths, n_steps)")
    values = np.empty((m, n + 1), dtype=np.float64)
    values[:, 0] = params.y0
    y = np.full(m, params.y0, dtype=np.float64)
    alive = np.ones(m, dtype=bool)
    abort_node = np.full(m, -1, dtype=np.int64)
    negative_any = np.zeros(m, dtype=bool)
    clamp_steps = np.zeros(m, dtype=np.int64)
    for k in range(n):
        y_next, clamped = _em_next(params, y, grid.dt, d_brownian[:, k], d_poisson[:, k])
        clamp_steps += clamped & alive
        bad = alive & ~np.isfinite(y_next)
        if bad.any():
            # freeze at the previous iterate when the update itself blew up
            y_next = np.where(bad, y, y_next)
            abort_node[bad] = k + 1
        over = alive & ~bad & (np.abs(y_next) > OVERFLOW_LIMIT)
        if over.any():
            abort_node[over] = k + 1
        y = np.where(alive, y_next, y)
        values[:, k + 1] = y
        negative_any |= alive & (y < 0.0)
        alive &= ~(bad | over)
    return EnsembleBlock(
        values=values,
        aborted=abort_node >= 0,
        abort_node=abort_node,
        negative_any=negative_any,
        clamp_steps=clamp_steps,
    )


def simulate_ensemble(
    params: ModelParams, grid: SimGrid, seed: int, lo: int, hi: int
) -> EnsembleBlock:
    """Simulate paths lo..hi-1 from their counter-based noise streams."""
    m = hi - lo
    d_brownian = np.empty((m, grid.n_steps), dtype=np.float64)
    d_poisson = np.empty((m, grid.n_steps), dtype=np.int64)
    for block in range(n_blocks(grid)):
        blo, bhi, db, dn = noise_block_matrix(grid, params.lam, seed, lo, hi, block)
        d_brownian[:, blo:bhi] = db
        d_poisson[:, blo:bhi] = dn
    return simulate_block(params, grid, d_brownian, d_poisson)


def advance_block(
    params: ModelParams,
    dt: float,
    y: np.ndarray,
    alive: np.ndarray,
    d_brownian: np.ndarray,
    d_poisson: np.ndarray,
    out_values: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Advance path states through a block of increments.

    Mutating companion of :func:`simulate_block` for streaming consumers:
    the same update expression, with dead paths frozen in place.  When given,
    ``out_values`` (same shape as the increment block) receives the node
    values after each step.  Returns the updated (y, alive).
    """
    for k in range(d_brownian.shape[1]):
        y_next, _ = _em_next(params, y, dt, d_brownian[:, k], d_poisson[:, k])
        bad = alive & ~np.isfinite(y_next)
        if bad.any():
            y_next = np.where(bad, y, y_next)
        over = alive & ~bad & (np.abs(y_next) > OVERFLOW_LIMIT)
        y = np.where(alive, y_next, y)
        if out_values is not None:
            out_values[:, k] = y
        alive = alive & ~(bad | over)
    return y, alive


def node_index(grid: SimGrid, t: float) -> int:
    """Largest node index k with k*dt <= t, robust to rounding in t/dt."""
    if not 0.0 <= t <= grid.horizon:
        raise ParameterError(f"t={t} outside [0, {grid.horizon}]")
    k = min(grid.n_steps, int(np.floor(t / grid.dt)))
    while k + 1 <= grid.n_steps and (k + 1) * grid.dt <= t:
        k += 1
    while k > 0 and k * grid.dt > t:
        k -= 1
    return k


def step_interpolant(path: EmPath, t: float) -> float:
    """Piecewise-constant extension: value Y_k on [t_k, t_{k+1}), Y_n at T."""
    return float(path.values[node_index(path.grid, t)])


def continuous_interpolant(
    params: ModelParams, path: EmPath, noise: DrivingNoise, t: float
) -> float:
    """Continuous-time EM interpolant pinned to the discrete iterates.

    Within a step the value is

        Y_k + f(Y_k)*(t - t_k) + sigma*|Y_k|**rho * (B(t) - B(t_k))
            + delta*Y_k * (N(t) - N(t_k)),

    where the intra-step Brownian displacement is bridge-sampled from the
    stored increment (one standard normal per step, exact in distribution at
    any single query time) and the intra-step jump count places the step's
    jumps uniformly.  Draws are keyed by (stream, step), so replays with the
    same seed reproduce the value bit for bit.
    """
    grid = path.grid
    k = node_index(grid, t)
    t_k = k * grid.dt
    if k == grid.n_steps or t == t_k:
        return float(path.values[k])
    tau = t - t_k
    y_k = float(path.values[k])
    drift, _ = drift_with_floor(params, y_k)
    rng = bridge_rng(noise.stream_id, k)
    z = rng.standard_normal()
    frac = tau / grid.dt
    d_brownian_t = frac * float(noise.brownian_increments[k]) + np.sqrt(
        tau * (grid.dt - tau) / grid.dt
    ) * z
    count = int(noise.poisson_increments[k])
    if count > 0:
        jump_frac = rng.random(count)
        d_poisson_t = int(np.count_nonzero(jump_frac <= frac))
    else:
        d_poisson_t = 0
    diffusion = params.sigma * abs(y_k) ** params.rho
    return float(y_k + float(drift) * tau + diffusion * d_brownian_t + params.delta * y_k * d_poisson_t)


def paths_to_csv(paths: list[EmPath], fileobj) -> None:
    """Write an ensemble as rows of (path_id, t, Y); header included."""
    writer = csv.writer(fileobj, lineterminator="\n")
    writer.writerow(["path_id", "t", "Y"])
    for pid, path in enumerate(paths):
        times = path.grid.node_times()
        for t, y in zip(times, path.values):
            writer.writerow([pid, repr(float(t)), repr(float(y))])


def save_path_ensemble(path, noises: list[DrivingNoise], paths: list[EmPath]) -> None:
    """Binary dump of noise plus simulated values (extends the noise format)."""
    if len(noises) != len(paths) or not paths:
        raise ParameterError("need matching, nonempty noise and path lists")
    grid = noises[0].grid
    lam = noises[0].lam
    seed = noises[0].stream_id[0]
    header = struct.pack(
        "<4sIQdddQQ", _MAGIC_PATHS, 1, seed, lam, grid.horizon, grid.dt, grid.n_steps, len(paths)
    )
    with open(path, "wb") as fh:
        fh.write(header)
        np.array([nz.stream_id[1] for nz in noises], dtype="<u8").tofile(fh)
        np.stack([nz.brownian_increments for nz in noises]).astype("<f8").tofile(fh)
        np.stack([nz.poisson_increments for nz in noises]).astype("<i8").tofile(fh)
        np.stack([p.values for p in paths]).astype("<f8").tofile(fh)


def load_path_ensemble(path) -> tuple[list[DrivingNoise], np.ndarray]:
    """Read back a path ensemble dump; returns (noises, values matrix)."""
    fmt = "<4sIQdddQQ"
    with open(path, "rb") as fh:
        magic, version, seed, lam, horizon, dt, n_steps, n_paths = struct.unpack(
            fmt, fh.read(struct.calcsize(fmt))
        )
        if magic != _MAGIC_PATHS or version != 1:
            raise ParameterError(f"not a path ensemble file: {path}")
        grid = SimGrid(horizon=horizon, n_steps=int(n_steps), dt=dt)
        idx = np.fromfile(fh, dtype="<u8", count=n_paths)
        db = np.fromfile(fh, dtype="<f8", count=n_paths * n_steps).reshape(n_paths, n_steps)
        dn = np.fromfile(fh, dtype="<i8", count=n_paths * n_steps).reshape(n_paths, n_steps)
        vals = np.fromfile(fh, dtype="<f8", count=n_paths * (n_steps + 1)).reshape(
            n_paths, n_steps + 1
        )
    noises = [
        DrivingNoise(
            grid=grid,
            brownian_increments=db[i].copy(),
            poisson_increments=dn[i].copy(),
            stream_id=(int(seed), int(idx[i])),
            lam=lam,
        )
        for i in range(n_paths)
    ]
    return noises, vals
