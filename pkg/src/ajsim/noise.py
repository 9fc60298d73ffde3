"""Reproducible Brownian/Poisson driving noise on simulation grids.

Streams are counter-based: every (seed, path_index, block) triple keys its
own Philox generator through ``numpy``'s SeedSequence, so paths are
statistically independent, order-insensitive, and replayable in any chunking
or thread layout.  Increment arrays are generated in fixed blocks of
``NOISE_BLOCK`` steps; node values (cumulative Brownian path and jump
counts) are accumulated per block, which makes coarsening a pure subsample
of node values.  Nested coarsening is therefore exact:
``coarsen(coarsen(x, a), b)`` equals ``coarsen(x, a*b)`` bit for bit.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .model import ParameterError
from .stats import EstimateWithCI, chunked_map, mean_from_sums, neumaier_sum

#: fixed generation block length (steps); part of the stream-keying contract
NOISE_BLOCK = 8192

# stream kinds keeping unrelated draws on disjoint key spaces
_KIND_PATH = 0
_KIND_BRIDGE = 1
_KIND_MODULUS = 2
_KIND_JUMPTIMES = 3

_MAGIC_NOISE = b"AJN1"
_MAGIC_PATHS = b"AJP1"


@dataclass(frozen=True)
class SimGrid:
    """Uniform time mesh t_k = k*dt with dt = horizon / n_steps.

    dt must lie in (0, 1); n_steps * dt reproduces the horizon to 1-ulp
    scale by construction.
    """

    horizon: float
    n_steps: int
    dt: float

    def __post_init__(self):
        if not math.isfinite(self.horizon) or self.horizon <= 0:
            raise ParameterError(f"horizon must be > 0, got {self.horizon}")
        if self.n_steps < 1:
            raise ParameterError(f"n_steps must be >= 1, got {self.n_steps}")
        if not 0.0 < self.dt < 1.0:
            raise ParameterError(f"dt must be in (0, 1), got {self.dt}")
        if abs(self.n_steps * self.dt - self.horizon) > 4 * np.finfo(float).eps * self.horizon:
            raise ParameterError("n_steps * dt does not reproduce the horizon")

    @classmethod
    def from_steps(cls, horizon: float, n_steps: int) -> "SimGrid":
        if n_steps < 1:
            raise ParameterError(f"n_steps must be >= 1, got {n_steps}")
        return cls(horizon=float(horizon), n_steps=int(n_steps), dt=float(horizon) / int(n_steps))

    @classmethod
    def from_dt(cls, horizon: float, dt: float) -> "SimGrid":
        if dt <= 0:
            raise ParameterError(f"dt must be > 0, got {dt}")
        n = round(float(horizon) / float(dt))
        if n < 1 or abs(n * dt - horizon) > 1e-9 * max(1.0, abs(horizon)):
            raise ParameterError(f"dt={dt} does not evenly divide horizon={horizon}")
        return cls.from_steps(horizon, n)

    def node_times(self) -> np.ndarray:
        return np.arange(self.n_steps + 1, dtype=np.float64) * self.dt

    def coarsened(self, factor: int) -> "SimGrid":
        if factor < 1 or self.n_steps % factor != 0:
            raise ParameterError(f"factor {factor} does not divide n_steps={self.n_steps}")
        return SimGrid(self.horizon, self.n_steps // factor, self.dt * factor)


@dataclass(frozen=True, eq=False)
class DrivingNoise:
    """Per-path Brownian and Poisson increments on a grid.

    ``brownian_increments`` are iid N(0, dt); ``poisson_increments`` are iid
    Poisson(lam * dt) counts.  ``stream_id`` = (seed, path_index) identifies
    the generating stream.  The node arrays anchor coarsening (coarse
    increments are differences of the stored node values).
    """

    grid: SimGrid
    brownian_increments: np.ndarray
    poisson_increments: np.ndarray
    stream_id: tuple[int, int]
    lam: float
    b_nodes: np.ndarray = field(repr=False, default=None)
    n_nodes: np.ndarray = field(repr=False, default=None)

    def __post_init__(self):
        n = self.grid.n_steps
        if self.brownian_increments.shape != (n,) or self.poisson_increments.shape != (n,):
            raise ParameterError("increment arrays must have n_steps entries")
        if self.b_nodes is None:
            object.__setattr__(self, "b_nodes", _block_cumsum(self.brownian_increments, 0.0))
        if self.n_nodes is None:
            object.__setattr__(
                self, "n_nodes", _block_cumsum(self.poisson_increments, np.int64(0))
            )

    @property
    def total_jumps(self) -> int:
        return int(self.n_nodes[-1])


def _block_cumsum(increments: np.ndarray, zero) -> np.ndarray:
    """Node values from increments, accumulated block by block.

    The per-block association mirrors generation and the coupled streaming
    consumers, so recomputing node values from stored increments is
    bit-stable.
    """
    n = increments.shape[0]
    nodes = np.empty(n + 1, dtype=increments.dtype)
    nodes[0] = zero
    start = zero
    for lo in range(0, n, NOISE_BLOCK):
        hi = min(lo + NOISE_BLOCK, n)
        nodes[lo + 1 : hi + 1] = start + np.cumsum(increments[lo:hi])
        start = nodes[hi]
    return nodes


def _stream_rng(seed: int, spawn_key: tuple[int, ...]) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=spawn_key)
    return np.random.Generator(np.random.Philox(ss))


def iter_noise_blocks(grid: SimGrid, lam: float, seed: int, path_index: int):
    """Yield (lo, hi, dB, dN) blocks for one path, in time order.

    Each block is keyed independently, so any block can be regenerated
    without drawing its predecessors.
    """
    if lam < 0:
        raise ParameterError(f"lam must be >= 0, got {lam}")
    sqrt_dt = math.sqrt(grid.dt)
    mean_jumps = lam * grid.dt
    for block, lo in enumerate(range(0, grid.n_steps, NOISE_BLOCK)):
        hi = min(lo + NOISE_BLOCK, grid.n_steps)
        rng = _stream_rng(seed, (_KIND_PATH, path_index, block))
        d_brownian = rng.normal(0.0, sqrt_dt, hi - lo)
        if mean_jumps > 0.0:
            d_poisson = rng.poisson(mean_jumps, hi - lo)
        else:
            d_poisson = np.zeros(hi - lo, dtype=np.int64)
        yield lo, hi, d_brownian, d_poisson.astype(np.int64, copy=False)


def n_blocks(grid: SimGrid) -> int:
    return (grid.n_steps + NOISE_BLOCK - 1) // NOISE_BLOCK


def noise_block_matrix(
    grid: SimGrid, lam: float, seed: int, path_lo: int, path_hi: int, block: int
) -> tuple[int, int, np.ndarray, np.ndarray]:
    """One generation block for a contiguous range of paths.

    Returns (step_lo, step_hi, dB, dN) with matrices of shape
    (path_hi - path_lo, step_hi - step_lo).  Row i reproduces exactly what
    :func:`iter_noise_blocks` yields for path ``path_lo + i`` at this block.
    """
    lo = block * NOISE_BLOCK
    hi = min(lo + NOISE_BLOCK, grid.n_steps)
    if not 0 <= lo < grid.n_steps:
        raise ParameterError(f"block {block} outside the grid")
    m = path_hi - path_lo
    sqrt_dt = math.sqrt(grid.dt)
    mean_jumps = lam * grid.dt
    d_brownian = np.empty((m, hi - lo), dtype=np.float64)
    d_poisson = np.zeros((m, hi - lo), dtype=np.int64)
    for i in range(m):
        rng = _stream_rng(seed, (_KIND_PATH, path_lo + i, block))
        d_brownian[i] = rng.normal(0.0, sqrt_dt, hi - lo)
        if mean_jumps > 0.0:
            d_poisson[i] = rng.poisson(mean_jumps, hi - lo)
    return lo, hi, d_brownian, d_poisson


def generate_noise(grid: SimGrid, lam: float, seed: int, path_index: int) -> DrivingNoise:
    """Driving noise for one path, a pure function of (seed, path_index)."""
    d_brownian = np.empty(grid.n_steps, dtype=np.float64)
    d_poisson = np.empty(grid.n_steps, dtype=np.int64)
    for lo, hi, db, dn in iter_noise_blocks(grid, lam, seed, path_index):
        d_brownian[lo:hi] = db
        d_poisson[lo:hi] = dn
    return DrivingNoise(
        grid=grid,
        brownian_increments=d_brownian,
        poisson_increments=d_poisson,
        stream_id=(int(seed), int(path_index)),
        lam=float(lam),
    )


def coarsen(noise: DrivingNoise, factor: int) -> DrivingNoise:
    """Aggregate noise onto the grid with step factor*dt.

    Coarse increments are differences of the stored node values, i.e. the
    sums of their constituent fine increments; jump counts are preserved
    exactly.
    """
    factor = int(factor)
    if factor == 1:
        return noise
    coarse_grid = noise.grid.coarsened(factor)
    b = noise.b_nodes[::factor]
    n = noise.n_nodes[::factor]
    return DrivingNoise(
        grid=coarse_grid,
        brownian_increments=np.diff(b),
        poisson_increments=np.diff(n),
        stream_id=noise.stream_id,
        lam=noise.lam,
        b_nodes=b.copy(),
        n_nodes=n.copy(),
    )


def bridge_rng(stream_id: tuple[int, int], step: int) -> np.random.Generator:
    """Generator for intra-step refinement draws of one (path, step) cell."""
    seed, path_index = stream_id
    return _stream_rng(seed, (_KIND_BRIDGE, path_index, step))


def jump_time_rng(seed: int, chunk_index: int) -> np.random.Generator:
    """Generator for standalone jump-time sampling (inequality checks)."""
    return _stream_rng(seed, (_KIND_JUMPTIMES, chunk_index))


def brownian_modulus_check(
    grid: SimGrid,
    seed: int,
    n_paths: int,
    subsamples: int = 16,
    threads: int = 1,
) -> EstimateWithCI:
    """Estimate E[max_n sup_{t in step n} |B(t) - B(t_n)|^4] by sub-sampling.

    Each step is refined at ``subsamples`` equispaced points.  The estimate
    must stay below (256/27) * horizon * dt up to Monte Carlo error; that
    analytic ceiling is available via :func:`brownian_modulus_bound`.
    """
    if n_paths < 100:
        raise ParameterError(f"n_paths must be >= 100, got {n_paths}")
    sub_std = math.sqrt(grid.dt / subsamples)
    n_steps = grid.n_steps
    # cap the per-call draw count; the chunk grid is fixed by n_paths alone
    block_paths = max(1, min(512, (1 << 23) // max(1, n_steps * subsamples)))

    def worker(lo: int, hi: int):
        total = 0.0
        total_sq = 0.0
        for blo in range(lo, hi, block_paths):
            bhi = min(blo + block_paths, hi)
            rng = _stream_rng(seed, (_KIND_MODULUS, blo))
            z = rng.normal(0.0, sub_std, (bhi - blo, n_steps, subsamples))
            np.cumsum(z, axis=2, out=z)
            sup4 = np.max(np.abs(z), axis=(1, 2)) ** 4
            total += float(np.sum(sup4))
            total_sq += float(np.sum(sup4 * sup4))
        return total, total_sq

    parts = chunked_map(worker, n_paths, threads=threads, chunk=4096)
    total = neumaier_sum(p[0] for p in parts)
    total_sq = neumaier_sum(p[1] for p in parts)
    return mean_from_sums(total, total_sq, n_paths)


def brownian_modulus_bound(grid: SimGrid) -> float:
    """Analytic ceiling (256/27) * horizon * dt for the modulus statistic."""
    return 256.0 / 27.0 * grid.horizon * grid.dt


def save_noise_ensemble(path, ensemble: list[DrivingNoise]) -> None:
    """Dump an ensemble to a version-tagged little-endian binary file."""
    if not ensemble:
        raise ParameterError("ensemble must not be empty")
    grid = ensemble[0].grid
    lam = ensemble[0].lam
    seed = ensemble[0].stream_id[0]
    for nz in ensemble:
        if nz.grid != grid or nz.lam != lam or nz.stream_id[0] != seed:
            raise ParameterError("ensemble members must share grid, lam and seed")
    header = struct.pack(
        "<4sIQdddQQ", _MAGIC_NOISE, 1, seed, lam, grid.horizon, grid.dt, grid.n_steps, len(ensemble)
    )
    with open(path, "wb") as fh:
        fh.write(header)
        np.array([nz.stream_id[1] for nz in ensemble], dtype="<u8").tofile(fh)
        np.stack([nz.brownian_increments for nz in ensemble]).astype("<f8").tofile(fh)
        np.stack([nz.poisson_increments for nz in ensemble]).astype("<i8").tofile(fh)


def load_noise_ensemble(path) -> list[DrivingNoise]:
    with open(path, "rb") as fh:
        header = fh.read(struct.calcsize("<4sIQdddQQ"))
        magic, version, seed, lam, horizon, dt, n_steps, n_paths = struct.unpack(
            "<4sIQdddQQ", header
        )
        if magic != _MAGIC_NOISE or version != 1:
            raise ParameterError(f"not a noise ensemble file: {path}")
        grid = SimGrid(horizon=horizon, n_steps=int(n_steps), dt=dt)
        idx = np.fromfile(fh, dtype="<u8", count=n_paths)
        db = np.fromfile(fh, dtype="<f8", count=n_paths * n_steps).reshape(n_paths, n_steps)
        dn = np.fromfile(fh, dtype="<i8", count=n_paths * n_steps).reshape(n_paths, n_steps)
    return [
        DrivingNoise(
            grid=grid,
            brownian_increments=db[i].copy(),
            poisson_increments=dn[i].copy(),
            stream_id=(int(seed), int(idx[i])),
            lam=lam,
        )
        for i in range(n_paths)
    ]
