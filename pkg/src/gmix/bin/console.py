"""Click interface."""

import json
import logging
from pathlib import Path
from typing import Callable, List, Optional, Tuple

import click

from gmix.experiments import (
    RECIPES,
    ConfigError,
    ExperimentRunner,
    load_config,
    parse_config,
    recipe_config,
)
from gmix.formatters import SchemaError, console
from gmix.mixture import MixtureError
from gmix.taxonomies import CellStatus
from gmix.tuples import Context
from gmix.utils import format_console

FORMATTERS = [console]


def catch_execute(func: Callable, *args):
    try:
        yield from func(*args)
    except (ConfigError, SchemaError, MixtureError, OSError) as e:
        format_console(__name__).critical(f"({type(e).__name__}) {e}")
        raise SystemExit(1)


def setup(
    log_level: str, path: Optional[Path], recipe: Optional[str]
) -> Tuple[List[Callable], Context]:
    logging.basicConfig(level=int(log_level))
    context = Context(path, recipe)
    return FORMATTERS, context


def _load(source: str, seed: Optional[int]):
    try:
        config = parse_config(load_config(source))
    except ConfigError as e:
        format_console(__name__).critical(f"({type(e).__name__}) {e}")
        raise SystemExit(2)

    if seed is not None:
        config = config._replace(master_seed=seed)

    return config


out = click.option(
    "-o",
    "--out",
    "out",
    type=click.Path(
        file_okay=False,
        dir_okay=True,
        writable=True,
        resolve_path=True,
        path_type=Path,
    ),
    help="""
The directory to write results.csv, summary.csv, config.lock.json and
plot.svg to. Defaults to the `output` field of the config, or to
gmix-<recipe or kind> in the current path.
""",
)

jobs = click.option(
    "-j",
    "--jobs",
    "jobs",
    default=1,
    envvar="GMIX_JOBS",
    type=click.IntRange(min=1),
    help="""
Number of grid cells run in parallel worker processes. Falls back
to the GMIX_JOBS environment variable. Results do not depend on
this value.
""",
    show_default=True,
)

seed = click.option(
    "-s",
    "--seed",
    "seed",
    type=click.INT,
    help="""
Override the master seed of the config. Per-cell seeds are derived from
the master seed and the grid coordinates.
""",
)

log_level = click.option(
    "-l",
    "--loglevel",
    "log_level",
    default=str(logging.INFO),
    type=click.Choice(
        [
            str(logging.DEBUG),
            str(logging.INFO),
            str(logging.WARNING),
            str(logging.ERROR),
            str(logging.CRITICAL),
        ]
    ),
    help="""
The log level of the root Python logger. The default is to
log anything at or above the INFO level. Decrease the value to
view per-step diagnostics.
""",
    show_default=True,
)

config = click.argument("config")


@click.group()
def cli() -> None:
    pass


@cli.command()
@out
@jobs
@seed
@log_level
@config
def run(
    out: Optional[Path],
    jobs: int,
    seed: Optional[int],
    log_level: str,
    config: str,
):
    """Run CONFIG, a JSON config path or a built-in recipe name."""
    experiment = _load(config, seed)
    path = out or Path(
        experiment.output or f"gmix-{experiment.recipe or experiment.kind}"
    )
    formatters, context = setup(log_level, path, experiment.recipe)

    with ExperimentRunner(jobs) as runner:
        for results in catch_execute(runner.execute, experiment, path):
            for formatter in formatters:
                formatter(results, context)

    failed = sum(
        r["status"] == CellStatus.FAILED for r in runner.record.rows
    )

    if failed:
        format_console(__name__).warning(
            f"{failed} cells failed, see the error column of results.csv."
        )


@cli.command()
@click.argument("name", required=False)
def recipes(name: Optional[str]):
    """List the built-in recipes, or print the config of NAME."""
    if name is None:
        for recipe in sorted(RECIPES):
            click.echo(f"{recipe}\t{RECIPES[recipe]['kind']}")

        return

    try:
        document = recipe_config(name)
    except ConfigError as e:
        format_console(__name__).critical(f"({type(e).__name__}) {e}")
        raise SystemExit(2)

    click.echo(json.dumps(document, indent=2, sort_keys=True))
