"""Task orchestration: run one configured experiment and write its files.

Every run writes ``manifest.json`` (config echo, version, timestamps) and
``result.json`` (the numeric payload), plus ``curve.csv`` for tasks that
produce per-node or per-level curves.  ``result.json`` carries no
timestamps and is rendered with sorted keys, so identical configs produce
byte-identical numeric output regardless of the worker-thread count.
"""

from __future__ import annotations

import csv
import datetime
import io
import json
import os

import numpy as np

from . import __version__
from .config import ExperimentConfig, config_to_dict, params_fingerprint
from .engine import simulate_ensemble
from .estimators import (
    convergence_in_probability,
    find_occupancy_level,
    moment_curve,
    occupancy_probability,
    pathwise_log_ratio,
    poisson_integral_inequality_check,
)
from .pricing import BarrierOptionSpec, BondSpec, barrier_option_price, bond_price
from .stats import chunk_ranges, neumaier_sum


def _jsonable(value):
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, (np.floating,)):
        return float(value)
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, np.ndarray):
        return [_jsonable(v) for v in value.tolist()]
    if isinstance(value, (np.bool_,)):
        return bool(value)
    return value


def _run_simulate(config: ExperimentConfig, threads: int):
    grid = config.require_grid()
    rows = [("path_id", "t", "Y")]
    times = grid.node_times()
    n_neg = 0
    n_aborted = 0
    n_clamped = 0
    terminal_sum = []
    for lo, hi in chunk_ranges(config.n_paths):
        block = simulate_ensemble(config.model, grid, config.seed, lo, hi)
        n_neg += int(np.count_nonzero(block.negative_any))
        n_aborted += int(np.count_nonzero(block.aborted))
        n_clamped += int(block.clamp_steps.sum())
        terminal_sum.append(float(block.values[block.included, -1].sum()))
        for i in range(block.n_paths):
            pid = lo + i
            for t, y in zip(times, block.values[i]):
                rows.append((pid, repr(float(t)), repr(float(y))))
    n_included = config.n_paths - n_aborted
    result = {
        "n_paths": config.n_paths,
        "n_negative_paths": n_neg,
        "n_aborted_paths": n_aborted,
        "n_floor_clamps": n_clamped,
        "terminal_mean_included": (
            neumaier_sum(terminal_sum) / n_included if n_included else None
        ),
    }
    return result, {"curve": rows}


def _curve_rows(curve):
    rows = [("t", "point", "std_error", "ci_low", "ci_high")]
    for t, est in zip(curve.times, curve.estimates):
        rows.append(
            (repr(float(t)), repr(est.point), repr(est.std_error), repr(est.ci_low), repr(est.ci_high))
        )
    return rows


def _run_moments(config: ExperimentConfig, threads: int):
    grid = config.require_grid()
    p = float(config.options["p"])
    curve = moment_curve(config.model, p, grid, config.n_paths, config.seed, threads=threads)
    points = curve.points()
    quarter = max(1, len(points) // 4)
    result = {
        "p": p,
        "negative_fraction": curve.negative_fraction,
        "n_excluded": curve.n_excluded,
        "max_point": float(points.max()),
        "plateau": float(points[-quarter:].mean()),
        "curve": [e.to_record() for e in curve.estimates],
    }
    return result, {"curve": _curve_rows(curve)}


def _run_occupancy(config: ExperimentConfig, threads: int):
    grid = config.require_grid()
    if config.options.get("n1") is not None:
        n1 = float(config.options["n1"])
        est = occupancy_probability(
            config.model, grid, config.n_paths, config.seed, n1, threads=threads
        )
    else:
        n1, est = find_occupancy_level(
            config.model,
            grid,
            config.n_paths,
            config.seed,
            eps=float(config.options["eps"]),
            threads=threads,
        )
    return {"n1": n1, "occupancy": est.to_record()}, {}


def _run_asymptotics(config: ExperimentConfig, threads: int):
    opts = config.options
    summary = pathwise_log_ratio(
        config.model,
        float(opts["t_large"]),
        config.n_paths,
        config.seed,
        dt=float(opts.get("dt", 0.01)),
        threads=threads,
    )
    result = {
        "band_halfwidth": summary.band_halfwidth,
        "fraction_in_band": summary.fraction_in_band,
        "n_samples": summary.n_samples,
        "n_excluded_samples": summary.n_excluded_samples,
        "n_aborted_paths": summary.n_aborted_paths,
        "sample_times": _jsonable(summary.sample_times),
        "fraction_in_band_per_time": _jsonable(summary.fraction_in_band_per_time),
    }
    rows = [("t", "fraction_in_band")]
    for t, frac in zip(summary.sample_times, summary.fraction_in_band_per_time):
        rows.append((repr(float(t)), repr(float(frac))))
    return result, {"curve": rows}


def _run_lemma22(config: ExperimentConfig, threads: int):
    lams = [float(v) for v in config.options.get("lams", [0.5, 2.0, 10.0])]
    horizons = [float(v) for v in config.options.get("horizons", [0.5, 1.0, 2.0])]
    combos = []
    for lam in lams:
        for horizon in horizons:
            report = poisson_integral_inequality_check(
                lam, horizon, config.n_paths, config.seed, threads=threads
            )
            combos.append(
                {
                    "lam": lam,
                    "horizon": horizon,
                    "all_ok": report.all_ok,
                    "checks": [c.to_record() for c in report.checks],
                }
            )
    return {"all_ok": all(c["all_ok"] for c in combos), "combos": combos}, {}


def _run_converge(config: ExperimentConfig, threads: int, log=None):
    grid = config.require_grid()
    report = convergence_in_probability(
        config.model,
        grid.horizon,
        float(config.options["xi"]),
        [float(v) for v in config.options["dt_levels"]],
        config.n_paths,
        config.seed,
        threads=threads,
    )
    if log is not None:
        for dt, est in zip(report.dt_levels, report.exceedance):
            log(f"level dt={dt:.6g}: exceedance={est.point:.4f} (se={est.std_error:.4f})")
    rows = [("dt", "exceedance", "exceedance_se", "gap_sup_sq", "gap_se")]
    for dt, exc, gap in zip(report.dt_levels, report.exceedance, report.interpolant_gap):
        rows.append(
            (repr(float(dt)), repr(exc.point), repr(exc.std_error), repr(gap.point), repr(gap.std_error))
        )
    return report.to_record(), {"curve": rows}


def _run_bond(config: ExperimentConfig, threads: int):
    grid = config.require_grid()
    maturity = float(config.options.get("maturity", grid.horizon))
    est = bond_price(
        config.model,
        BondSpec(maturity=maturity),
        grid,
        config.n_paths,
        config.seed,
        threads=threads,
    )
    return {"maturity": maturity, "price": est.to_record()}, {}


def _run_barrier(config: ExperimentConfig, threads: int):
    grid = config.require_grid()
    spec = BarrierOptionSpec(
        strike=float(config.options["strike"]),
        barrier=float(config.options["barrier"]),
        maturity=float(config.options.get("maturity", grid.horizon)),
    )
    est = barrier_option_price(
        config.model, spec, grid, config.n_paths, config.seed, threads=threads
    )
    return {
        "strike": spec.strike,
        "barrier": spec.barrier,
        "maturity": spec.maturity,
        "price": est.to_record(),
    }, {}


_RUNNERS = {
    "simulate": _run_simulate,
    "moments": _run_moments,
    "occupancy": _run_occupancy,
    "asymptotics": _run_asymptotics,
    "lemma22": _run_lemma22,
    "converge": _run_converge,
    "bond": _run_bond,
    "barrier": _run_barrier,
}


def run_task(config: ExperimentConfig, threads: int = 1, log=None):
    """Execute the configured task; returns (result_payload, curves)."""
    runner = _RUNNERS[config.task]
    if config.task == "converge":
        result, curves = runner(config, threads, log=log)
    else:
        result, curves = runner(config, threads)
    payload = {
        "task": config.task,
        "params_hash": params_fingerprint(config.model),
        "seed": config.seed,
        "n_paths": config.n_paths,
        "grid": (
            {
                "horizon": config.grid.horizon,
                "n_steps": config.grid.n_steps,
                "dt": config.grid.dt,
            }
            if config.grid is not None
            else None
        ),
        "result": _jsonable(result),
    }
    return payload, curves


def write_outputs(config: ExperimentConfig, threads: int = 1, log=None) -> dict:
    """Run the task and write manifest.json / result.json / curve.csv."""
    out_dir = config.out_dir
    os.makedirs(out_dir, exist_ok=True)
    payload, curves = run_task(config, threads=threads, log=log)
    written = {}
    manifest = {
        "version": __version__,
        "config": config_to_dict(config),
        "seed": config.seed,
        "threads": threads,
        "created_utc": datetime.datetime.now(datetime.timezone.utc).isoformat(),
    }
    manifest_path = os.path.join(out_dir, "manifest.json")
    with open(manifest_path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    written["manifest"] = manifest_path
    if "json" in config.formats:
        result_path = os.path.join(out_dir, "result.json")
        with open(result_path, "w", encoding="utf-8", newline="\n") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")
        written["result"] = result_path
    if "csv" in config.formats:
        for name, rows in curves.items():
            csv_path = os.path.join(out_dir, f"{name}.csv")
            buf = io.StringIO()
            writer = csv.writer(buf, lineterminator="\n")
            writer.writerows(rows)
            with open(csv_path, "w", encoding="utf-8", newline="\n") as fh:
                fh.write(buf.getvalue())
            written[name] = csv_path
    return written
