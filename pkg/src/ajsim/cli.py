"""Command-line entry point.

Usage::

    ajsim <task> --config experiment.toml [--set k=v]... [--out dir]
                 [--threads n] [--seed s]
    ajsim validate --config experiment.toml

Tasks: simulate, moments, occupancy, asymptotics, lemma22, converge, bond,
barrier.  The config's ``task`` field must match the subcommand.  Exit
codes: 2 for configuration errors, 3 for runtime aborts (for example every
path overflowed).
"""

from __future__ import annotations

import dataclasses
import os
import sys

import click
import tomlkit

from .config import (
    TASKS,
    ConfigError,
    load_config,
    validate_config_dict,
    _plain,
)
from .estimators import AllPathsAbortedError
from .runner import write_outputs

EXIT_CONFIG = 2
EXIT_RUNTIME = 3


def _resolve_threads(threads: int | None) -> int:
    if threads is not None:
        return max(1, threads)
    env = os.environ.get("AJSIM_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError as exc:
            raise ConfigError("AJSIM_THREADS", f"not an integer: {env!r}") from exc
    return 1


def _common_options(fn):
    for option in reversed(
        (
            click.option("--config", "config_path", required=True, type=click.Path(exists=True)),
            click.option(
                "--set",
                "overrides",
                multiple=True,
                metavar="KEY.PATH=VALUE",
                help="Override a config value.",
            ),
            click.option("--out", "out_dir", default=None, help="Output directory."),
            click.option("--threads", default=None, type=int, help="Worker threads."),
            click.option("--seed", default=None, type=int, help="Override ensemble seed."),
        )
    ):
        fn = option(fn)
    return fn


@click.group()
def main():
    """Monte Carlo experiments for the jump-extended Ait-Sahalia-type model."""


def _run(task: str, config_path, overrides, out_dir, threads, seed):
    try:
        n_threads = _resolve_threads(threads)
        items = list(overrides)
        if seed is not None:
            items.append(f"ensemble.seed={int(seed)}")
        config = load_config(config_path, tuple(items))
        if config.task != task:
            raise ConfigError("task", f"config declares {config.task!r}, command is {task!r}")
        if out_dir is not None:
            config = dataclasses.replace(config, out_dir=out_dir)
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    try:
        written = write_outputs(config, threads=n_threads, log=lambda s: click.echo(s, err=True))
    except AllPathsAbortedError as exc:
        click.echo(f"runtime abort: {exc}", err=True)
        sys.exit(EXIT_RUNTIME)
    for name in sorted(written):
        click.echo(f"{name}: {written[name]}")


def _make_task_command(task: str):
    @main.command(name=task, help=f"Run the {task} task from a config file.")
    @_common_options
    def _cmd(config_path, overrides, out_dir, threads, seed):
        _run(task, config_path, overrides, out_dir, threads, seed)

    return _cmd


for _task in TASKS:
    _make_task_command(_task)


@main.command(name="validate", help="Check a config without running anything.")
@_common_options
def validate_cmd(config_path, overrides, out_dir, threads, seed):
    from .config import apply_override

    try:
        with open(config_path, "r", encoding="utf-8") as fh:
            doc = _plain(dict(tomlkit.parse(fh.read())))
        items = list(overrides)
        if seed is not None:
            items.append(f"ensemble.seed={int(seed)}")
        for item in items:
            doc = apply_override(doc, item)
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    report = validate_config_dict(doc)
    for line in report.lines():
        click.echo(line)
    if not report.ok:
        sys.exit(EXIT_CONFIG)


if __name__ == "__main__":
    main()
