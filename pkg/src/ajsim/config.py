"""Experiment configuration: TOML ingestion, validation, and round-tripping.

A config file has a ``task`` plus [model], [grid], [ensemble] and [output]
tables, and one optional table named after the task for its specific knobs::

    task = "moments"

    [model]
    a_neg1 = 0.1
    a0 = 0.1
    a1 = 0.2
    a2 = 0.8
    gamma = 1.5
    sigma = 0.3
    rho = 1.2
    delta = 0.1
    lam = 1.0
    y0 = 1.0

    [grid]
    horizon = 5.0
    n_steps = 5000      # or: dt = 1e-3

    [ensemble]
    n_paths = 10000
    seed = 42

    [output]
    dir = "out"
    formats = ["json", "csv"]

    [moments]
    p = 2.0

Every numeric field is range-checked against its owning type's invariants
before any simulation starts, and ``parse(emit(config)) == config``.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import tomlkit

from .model import ModelParams, ParameterError, regime_check
from .noise import SimGrid

TASKS = (
    "simulate",
    "moments",
    "occupancy",
    "asymptotics",
    "lemma22",
    "converge",
    "bond",
    "barrier",
)

_MODEL_FIELDS = ("a_neg1", "a0", "a1", "a2", "gamma", "sigma", "rho", "delta", "lam", "y0")


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending field path."""

    def __init__(self, path: str, message: str):
        self.field_path = path
        super().__init__(f"{path}: {message}")


@dataclass(frozen=True)
class ExperimentConfig:
    task: str
    model: ModelParams
    grid: SimGrid | None
    n_paths: int
    seed: int
    options: dict
    out_dir: str = "out"
    formats: tuple[str, ...] = ("json",)

    def require_grid(self) -> SimGrid:
        if self.grid is None:
            raise ConfigError("grid", f"task '{self.task}' requires a [grid] table")
        return self.grid


def _get(table: dict, path: str, key: str, kind, required: bool = True, default=None):
    if key not in table:
        if required:
            raise ConfigError(f"{path}.{key}", "missing required field")
        return default
    value = table[key]
    if kind is float and isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value)
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}.{key}", f"expected an integer, got {value!r}")
        return int(value)
    if kind is str and isinstance(value, str):
        return str(value)
    if kind is list and isinstance(value, (list, tuple)):
        return list(value)
    raise ConfigError(f"{path}.{key}", f"expected {kind.__name__}, got {value!r}")


def _parse_model(table: dict) -> ModelParams:
    unknown = set(table) - set(_MODEL_FIELDS)
    if unknown:
        raise ConfigError(f"model.{sorted(unknown)[0]}", "unknown model field")
    kwargs = {name: _get(table, "model", name, float) for name in _MODEL_FIELDS}
    try:
        return ModelParams(**kwargs)
    except ParameterError as exc:
        raise ConfigError("model", str(exc)) from exc


def _parse_grid(table: dict) -> SimGrid:
    horizon = _get(table, "grid", "horizon", float)
    n_steps = _get(table, "grid", "n_steps", int, required=False)
    dt = _get(table, "grid", "dt", float, required=False)
    if (n_steps is None) == (dt is None):
        raise ConfigError("grid", "give exactly one of n_steps or dt")
    try:
        if n_steps is not None:
            return SimGrid.from_steps(horizon, n_steps)
        return SimGrid.from_dt(horizon, dt)
    except ParameterError as exc:
        raise ConfigError("grid", str(exc)) from exc


def parse_config(doc: dict) -> ExperimentConfig:
    task = _get(doc, "", "task", str).strip()
    if task not in TASKS:
        raise ConfigError("task", f"unknown task {task!r}; expected one of {TASKS}")
    if "model" not in doc:
        raise ConfigError("model", "missing required table")
    model = _parse_model(dict(doc["model"]))
    grid = _parse_grid(dict(doc["grid"])) if "grid" in doc else None
    ens = dict(doc.get("ensemble", {}))
    n_paths = _get(ens, "ensemble", "n_paths", int, required=False, default=1000)
    seed = _get(ens, "ensemble", "seed", int, required=False, default=0)
    if n_paths < 1:
        raise ConfigError("ensemble.n_paths", f"must be >= 1, got {n_paths}")
    if seed < 0:
        raise ConfigError("ensemble.seed", f"must be >= 0, got {seed}")
    out = dict(doc.get("output", {}))
    out_dir = _get(out, "output", "dir", str, required=False, default="out")
    formats = tuple(_get(out, "output", "formats", list, required=False, default=["json"]))
    for fmt in formats:
        if fmt not in ("json", "csv"):
            raise ConfigError("output.formats", f"unknown format {fmt!r}")
    options = {k: _plain(v) for k, v in dict(doc.get(task, {})).items()}
    config = ExperimentConfig(
        task=task,
        model=model,
        grid=grid,
        n_paths=n_paths,
        seed=seed,
        options=options,
        out_dir=out_dir,
        formats=formats,
    )
    _validate_task_options(config)
    return config


def _plain(value):
    """Strip tomlkit wrapper types down to plain Python values."""
    if isinstance(value, bool):
        return value
    if isinstance(value, int):
        return int(value)
    if isinstance(value, float):
        return float(value)
    if isinstance(value, str):
        return str(value)
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items()}
    return value


def _require_option(config: ExperimentConfig, key: str, kind) -> object:
    return _get(config.options, config.task, key, kind)


def _optional_option(config: ExperimentConfig, key: str, kind, default):
    return _get(config.options, config.task, key, kind, required=False, default=default)


def _validate_task_options(config: ExperimentConfig) -> None:
    task, opts = config.task, config.options
    path = task
    if task == "moments":
        _require_option(config, "p", float)
        config.require_grid()
    elif task == "occupancy":
        n1 = _optional_option(config, "n1", float, None)
        eps = _optional_option(config, "eps", float, None)
        if n1 is None and eps is None:
            raise ConfigError(path, "give n1 (single estimate) or eps (doubling search)")
        if n1 is not None and n1 <= 1.0:
            raise ConfigError(f"{path}.n1", f"must be > 1, got {n1}")
        if eps is not None and not 0.0 < eps < 1.0:
            raise ConfigError(f"{path}.eps", f"must be in (0,1), got {eps}")
        config.require_grid()
    elif task == "asymptotics":
        t_large = _require_option(config, "t_large", float)
        if t_large < 50.0:
            raise ConfigError(f"{path}.t_large", f"must be >= 50, got {t_large}")
    elif task == "lemma22":
        lams = _optional_option(config, "lams", list, [0.5, 2.0, 10.0])
        horizons = _optional_option(config, "horizons", list, [0.5, 1.0, 2.0])
        for name, values in (("lams", lams), ("horizons", horizons)):
            for v in values:
                if not isinstance(v, (int, float)) or isinstance(v, bool) or v < 0:
                    raise ConfigError(f"{path}.{name}", f"entries must be >= 0, got {v!r}")
    elif task == "converge":
        xi = _require_option(config, "xi", float)
        if not 0.0 < xi < 1.0:
            raise ConfigError(f"{path}.xi", f"must be in (0,1), got {xi}")
        levels = _require_option(config, "dt_levels", list)
        if not levels or any(
            not isinstance(v, (int, float)) or isinstance(v, bool) for v in levels
        ):
            raise ConfigError(f"{path}.dt_levels", "must be a nonempty list of step sizes")
        if any(b >= a for a, b in zip(levels, levels[1:])):
            raise ConfigError(f"{path}.dt_levels", "must be strictly descending")
        config.require_grid()
    elif task == "bond":
        config.require_grid()
    elif task == "barrier":
        strike = _require_option(config, "strike", float)
        barrier = _require_option(config, "barrier", float)
        if strike <= 0:
            raise ConfigError(f"{path}.strike", f"must be > 0, got {strike}")
        if barrier <= 0:
            raise ConfigError(f"{path}.barrier", f"must be > 0, got {barrier}")
        config.require_grid()
    elif task == "simulate":
        config.require_grid()


def load_config(path, overrides: tuple[str, ...] = ()) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as fh:
        doc = tomlkit.parse(fh.read())
    plain = _plain({k: v for k, v in doc.items()})
    for item in overrides:
        plain = apply_override(plain, item)
    return parse_config(plain)


def apply_override(doc: dict, item: str) -> dict:
    """Apply one ``dotted.path=value`` override; values parse as TOML."""
    if "=" not in item:
        raise ConfigError(item, "override must look like key.path=value")
    key, raw = item.split("=", 1)
    key = key.strip()
    try:
        value = _plain(tomlkit.parse(f"x = {raw.strip()}")["x"])
    except Exception:
        value = raw.strip()
    target = doc
    parts = key.split(".")
    for part in parts[:-1]:
        target = target.setdefault(part, {})
        if not isinstance(target, dict):
            raise ConfigError(key, "override path crosses a non-table value")
    target[parts[-1]] = value
    return doc


def emit_config(config: ExperimentConfig) -> str:
    """Render a config back to TOML; parsing the result reproduces it."""
    doc = tomlkit.document()
    doc["task"] = config.task
    model = tomlkit.table()
    for name in _MODEL_FIELDS:
        model[name] = float(getattr(config.model, name))
    doc["model"] = model
    if config.grid is not None:
        grid = tomlkit.table()
        grid["horizon"] = float(config.grid.horizon)
        grid["n_steps"] = int(config.grid.n_steps)
        doc["grid"] = grid
    ens = tomlkit.table()
    ens["n_paths"] = config.n_paths
    ens["seed"] = config.seed
    doc["ensemble"] = ens
    out = tomlkit.table()
    out["dir"] = config.out_dir
    out["formats"] = list(config.formats)
    doc["output"] = out
    if config.options:
        opts = tomlkit.table()
        for key in sorted(config.options):
            opts[key] = config.options[key]
        doc[config.task] = opts
    return tomlkit.dumps(doc)


def config_to_dict(config: ExperimentConfig) -> dict:
    record = {
        "task": config.task,
        "model": {name: float(getattr(config.model, name)) for name in _MODEL_FIELDS},
        "ensemble": {"n_paths": config.n_paths, "seed": config.seed},
        "output": {"dir": config.out_dir, "formats": list(config.formats)},
        "options": dict(sorted(config.options.items())),
    }
    if config.grid is not None:
        record["grid"] = {
            "horizon": config.grid.horizon,
            "n_steps": config.grid.n_steps,
            "dt": config.grid.dt,
        }
    return record


def params_fingerprint(params: ModelParams) -> str:
    payload = json.dumps(
        {name: float(getattr(params, name)) for name in _MODEL_FIELDS}, sort_keys=True
    )
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


@dataclass
class ValidationReport:
    """Hard errors (type invariants) and advisory regime warnings."""

    errors: list[str] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.errors

    def lines(self) -> list[str]:
        out = [f"error: {msg}" for msg in self.errors]
        out += [f"warning: {msg}" for msg in self.warnings]
        if not out:
            out = ["all checks passed"]
        return out


def validate_config_dict(doc: dict) -> ValidationReport:
    """Pure config check: never runs a simulation.

    Hard range violations come back as errors; parameter sets outside a
    bound's regime come back as named warnings.
    """
    report = ValidationReport()
    try:
        config = parse_config(doc)
    except ConfigError as exc:
        report.errors.append(str(exc))
        return report
    p = float(config.options.get("p", 2.0)) if config.task == "moments" else 2.0
    regime = regime_check(config.model, p=max(p, 2.0))
    m = config.model
    if not regime.moment_bound_ok:
        report.warnings.append(
            f"moment bound (order p={max(p, 2.0)}) not guaranteed: needs "
            f"2*rho < gamma+1, or 2*rho == gamma+1 with a2 > (p-1)*sigma^2/2 "
            f"(rho={m.rho}, gamma={m.gamma}, a2={m.a2}, sigma={m.sigma})"
        )
    if not regime.inverse_moment_ok:
        report.warnings.append(
            f"inverse moment bound not guaranteed: needs 2*rho <= gamma+1 and "
            f"gamma <= 2 (rho={m.rho}, gamma={m.gamma})"
        )
    if not regime.pathwise_lower_ok:
        report.warnings.append(
            f"pathwise lower log-asymptotics regime not met: needs rho <= 1.5 "
            f"and gamma <= 2 (rho={m.rho}, gamma={m.gamma})"
        )
    if not regime.pathwise_upper_ok:
        report.warnings.append(
            f"pathwise upper log-asymptotics regime not met: needs "
            f"rho < (gamma+1)/2 and gamma <= 2 (rho={m.rho}, gamma={m.gamma})"
        )
    if not regime.time_avg_ok:
        report.warnings.append(
            f"time-averaged second-moment bound not guaranteed: needs rho > 1.5 "
            f"(rho={m.rho})"
        )
    return report
