"""Command line: run a config, sweep one experiment with defaults, or dump curve knots."""

from __future__ import annotations

import sys

import click
import numpy as np

from .curves import family_curves, figure_demo, write_curves
from .mc_harness import (DEFAULTS, ConfigError, default_config, emit, load_config, run_experiment,
                         tomllib)


def _emit(records, path, fmt):
    fmt = fmt or ("json" if str(path).endswith(".json") else "csv")
    emit(records, fmt, path)
    click.echo(f"wrote {len(records)} records to {path}", err=True)


def _print_summary(records):
    for r in records:
        if r.replicate == -1:
            click.echo(f"{r.experiment} n={r.n} n_t={r.n_t} V={r.V} {r.statistic} = {r.value:.6g}")


@click.group()
def main():
    """Cross-validation asymptotics experiments."""


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--output", default=None, help="Overrides the config's output path.")
@click.option("--format", "fmt", type=click.Choice(["csv", "json"]), default=None)
@click.option("--workers", type=int, default=None, help="Process count (CVASYM_THREADS wins).")
@click.option("--quiet", is_flag=True)
def run(config_path, output, fmt, workers, quiet):
    """Run the experiment described by a TOML config."""
    try:
        cfg = load_config(config_path)
    except ConfigError as exc:
        raise click.ClickException(str(exc))
    records = run_experiment(cfg, workers)
    _emit(records, output or cfg.output or f"{cfg.experiment}.csv", fmt)
    if not quiet:
        _print_summary(records)


@main.command()
@click.option("--experiment", required=True, type=click.Choice(sorted(DEFAULTS)))
@click.option("--n", "n", multiple=True, type=int, help="Repeat to give an n ladder.")
@click.option("--seed", type=int, default=None)
@click.option("--replicates", type=int, default=None)
@click.option("--workers", type=int, default=None)
@click.option("--output", default=None)
@click.option("--format", "fmt", type=click.Choice(["csv", "json"]), default=None)
def sweep(experiment, n, seed, replicates, workers, output, fmt):
    """Run one experiment with its default settings, optionally overriding n, seed, replicates."""
    over = dict(base_seed=seed, replicates=replicates, workers=workers)
    if n:
        over["n"] = list(n)
        if DEFAULTS[experiment].get("n_t_rule", "explicit") == "explicit" and "n_t" in DEFAULTS[experiment]:
            raise click.ClickException("this experiment uses explicit n_t; use `run` with a config")
    try:
        cfg = default_config(experiment, **over)
    except ConfigError as exc:
        raise click.ClickException(str(exc))
    records = run_experiment(cfg)
    _emit(records, output or f"{experiment}.csv", fmt)
    _print_summary(records)


@main.command()
@click.option("--family", default=None, help="e.g. 'polynomial:beta=1.5,kappa=0.5'")
@click.option("--n", type=int, default=None)
@click.option("--n_t", "n_t", type=int, default=None)
@click.option("--x", type=float, default=None)
@click.option("--demo", is_flag=True, help="Illustrative f, g with ||s||^2 = 1.2 at x = 25.")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--paths", type=int, default=0, help="Also emit this many simulated W_{g} paths.")
@click.option("--seed", type=int, default=0)
@click.option("--output", default="-", help="CSV path, '-' for stdout.")
def curves(family, n, n_t, x, demo, config_path, paths, seed, output):
    """Knots of f_n, g_n and the window ends a_x, b_x as CSV."""
    opts = {}
    if config_path:
        with open(config_path, "rb") as fh:
            opts = tomllib.load(fh).get("curves", {})
    demo = demo or opts.get("mode") == "demo"
    x = x if x is not None else opts.get("x", 25.0 if demo else 1.0)
    rng = np.random.default_rng(seed if seed else opts.get("seed", 0))
    paths = paths or int(opts.get("paths", 0))
    if demo:
        cs = figure_demo(x, int(opts.get("delta", 100)), paths, rng)
    else:
        family = family or opts.get("family")
        n = n or opts.get("n")
        n_t = n_t or opts.get("n_t")
        if not (family and n and n_t):
            raise click.UsageError("need --family, --n and --n_t (or --demo)")
        cs = family_curves(family, n, n_t, x, paths, rng)
    if output == "-":
        write_curves(cs, sys.stdout)
    else:
        write_curves(cs, output)
        click.echo(f"a_x = {cs.win.a:.6g}, b_x = {cs.win.b:.6g}; wrote {output}", err=True)


if __name__ == "__main__":
    main()
