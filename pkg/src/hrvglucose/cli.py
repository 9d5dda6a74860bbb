"""Command-line entry point: ``hrvglucose extract-features | run | ablate``."""

from __future__ import annotations

import logging
import sys

import click

from . import pipeline
from .config import ConfigError, RunConfig
from .experiment import ABLATION_CONFIGS


def _setup_logging(verbose: bool) -> None:
    logging.basicConfig(stream=sys.stderr, level=logging.DEBUG if verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")


def _load(config, seed, selection_mode):
    overrides: dict = {}
    if seed is not None or selection_mode is not None:
        overrides["cv"] = {}
    if seed is not None:
        overrides["cv"]["seed"] = seed
    if selection_mode is not None:
        overrides["cv"]["selection_mode"] = selection_mode.replace("-", "_")
    try:
        return RunConfig.load(config, overrides)
    except ConfigError as exc:
        raise click.UsageError(str(exc)) from exc


def common_options(f):
    f = click.option("--config", "config", required=True, type=click.Path(dir_okay=False),
                     help="YAML run configuration.")(f)
    f = click.option("--seed", type=int, default=None, help="Override cv.seed.")(f)
    f = click.option("--jobs", type=click.IntRange(min=1), default=1, show_default=True,
                     help="Parallel workers (output is identical for any value).")(f)
    f = click.option("--selection-mode", type=click.Choice(["global", "per-fold"]), default=None,
                     help="Override cv.selection_mode.")(f)
    f = click.option("--output", type=click.Path(file_okay=False), default=None,
                     help="Output directory (overrides the config).")(f)
    f = click.option("-v", "--verbose", is_flag=True)(f)
    return f


def _fail(exc: Exception):
    click.echo(f"error: {exc}", err=True)
    sys.exit(1)


@click.group()
@click.version_option(package_name="hrvglucose")
def main():
    """Sleep-aware, age-normalized HRV glucose regression pipeline."""


@main.command("extract-features")
@common_options
def extract_features(config, seed, jobs, selection_mode, output, verbose):
    """Ingest signals and write features.csv plus per-subject QC."""
    _setup_logging(verbose)
    cfg = _load(config, seed, selection_mode)
    try:
        files = pipeline.cmd_extract_features(cfg, output, jobs)
    except Exception as exc:  # noqa: BLE001 - any failure must end with a nonzero status
        _fail(exc)
    for f in files:
        click.echo(str(f))


@main.command()
@common_options
def run(config, seed, jobs, selection_mode, output, verbose):
    """Full pipeline: selection, cross-validation, ablation and stage tables."""
    _setup_logging(verbose)
    cfg = _load(config, seed, selection_mode)
    try:
        result = pipeline.cmd_run(cfg, output, jobs)
    except Exception as exc:  # noqa: BLE001
        _fail(exc)
    s = result.cv.summary()
    click.echo(f"mode={s['selection_mode']} seed={s['seed']} "
               f"R2={s['r2_mean']:.3f}±{s['r2_sd']:.3f} MAE={s['mae_mean']:.3f}±{s['mae_sd']:.3f} "
               f"pooled r={s['pooled_pearson_r']:.3f}")
    for row in result.ablation.rows:
        d = row.to_dict()
        click.echo(f"{d['configuration']:<13} R2={d['r2']:+.3f} MAE={d['mae']:.3f} "
                   f"features={d['features']} dR2={d['delta_r2']:+.3f}")


@main.command()
@common_options
@click.option("--configs", default=",".join(ABLATION_CONFIGS), show_default=True,
              help="Comma-separated subset of ablation configurations.")
def ablate(config, seed, jobs, selection_mode, output, verbose, configs):
    """Run only the ablation protocol."""
    _setup_logging(verbose)
    cfg = _load(config, seed, selection_mode)
    wanted = [c.strip() for c in configs.split(",") if c.strip()]
    unknown = [c for c in wanted if c not in ABLATION_CONFIGS]
    if unknown or not wanted:
        raise click.UsageError(f"unknown configuration(s): {unknown}; choose from {', '.join(ABLATION_CONFIGS)}")
    try:
        files = pipeline.cmd_ablate(cfg, output, jobs, wanted)
    except Exception as exc:  # noqa: BLE001
        _fail(exc)
    for f in files:
        click.echo(str(f))


if __name__ == "__main__":
    main()
