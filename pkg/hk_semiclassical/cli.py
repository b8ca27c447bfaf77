"""Command-line entry point for hk-semiclassical."""

from __future__ import annotations

import functools
import logging
from pathlib import Path

import click

from hk_semiclassical.cache import ReferenceCache
from hk_semiclassical.config import load_config
from hk_semiclassical.exceptions import HKError
from hk_semiclassical.experiments import EXPERIMENT_TYPES

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"

logger = logging.getLogger(__name__)


def experiment_options(command):
    """Options shared by every experiment subcommand."""

    @click.option(
        "--config",
        "config_path",
        type=click.Path(exists=True, dir_okay=False, path_type=Path),
        required=True,
        help="JSON configuration file.",
    )
    @click.option(
        "--out",
        "out_dir",
        type=click.Path(file_okay=False, path_type=Path),
        help="Output directory (default: output.directory from the config).",
    )
    @click.option("--workers", type=click.IntRange(min=1), help="Worker processes for independent jobs.")
    @click.option("--seed", type=int, help="Seed for quadrature jitter.")
    @click.option(
        "--cache/--no-cache",
        default=None,
        help="Cache reference solutions under the user cache directory.",
    )
    @functools.wraps(command)
    def wrapper(*args, **kwargs):
        return command(*args, **kwargs)

    return wrapper


def run_experiment(name, config_path, out_dir, workers, seed, cache):
    """Load the configuration and run one experiment, mapping package errors to CLI errors."""
    try:
        config = load_config(config_path, experiment=name, overrides={"seed": seed, "workers": workers})
        use_cache = config.reference.cache if cache is None else cache
        experiment = EXPERIMENT_TYPES[name](config, workers, ReferenceCache() if use_cache else None)
        result = experiment.run(out_dir or Path(config.output.directory))
    except HKError as ex:
        raise click.ClickException(str(ex)) from ex
    click.echo(f"Wrote {result.table} and {result.summary_path}")


@click.group(context_settings={"auto_envvar_prefix": "HK_SEMICLASSICAL"})
@click.version_option(package_name="hk-semiclassical")
@click.option(
    "--log-level",
    type=click.Choice(["DEBUG", "INFO", "WARNING", "ERROR"], case_sensitive=False),
    default="INFO",
    show_default=True,
)
def cli(log_level: str) -> None:
    """Herman-Kluk semiclassical propagation experiments."""
    logging.basicConfig(level=log_level.upper(), format=LOG_FORMAT)


@cli.command()
@experiment_options
def propagate(**options) -> None:
    """Propagate the configured state and compare with the reference."""
    run_experiment("propagate", **options)


@cli.command()
@experiment_options
def scaling(**options) -> None:
    """Fit the log-log slope of the HK error over the ħ ladder."""
    run_experiment("scaling", **options)


@cli.command("phase-invariance")
@experiment_options
def phase_invariance(**options) -> None:
    """Fit the log-log slope of the difference between two phase choices."""
    run_experiment("phase-invariance", **options)


@cli.command()
@experiment_options
def ehrenfest(**options) -> None:
    """Find the first time the HK error exceeds the threshold, per ħ."""
    run_experiment("ehrenfest", **options)


@cli.command("inspect-kernel")
@experiment_options
def inspect_kernel(**options) -> None:
    """Bin the FB kernel of the propagator by distance from the flow graph."""
    run_experiment("inspect-kernel", **options)
