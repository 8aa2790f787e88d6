"""Command-line interface for training and experiments."""

from __future__ import annotations

import sys
from functools import wraps
from pathlib import Path
from typing import TYPE_CHECKING

import click
import structlog
from pydantic import ValidationError
from safir.logging import configure_logging

from adadf.config import DataSource, Precision, TargetMode, resolve_config_path
from adadf.constants import LOGGER_NAME
from adadf.exceptions import (
    AdaDFError,
    ArtifactError,
    ConfigError,
    DatasetParseError,
)
from adadf.factory import ComponentFactory
from adadf.services.experiment import ABLATION_AXES, parse_axis_values
from adadf.storage.artifacts import write_csv
from adadf.util import parse_float_list

if TYPE_CHECKING:
    from typing import Any, Callable, Dict, Optional, Tuple, TypeVar

    T = TypeVar("T")

__all__ = ["ablate", "eval", "help", "main", "noise_bench", "report", "train"]

_USAGE_ERRORS = (ConfigError, DatasetParseError, ArtifactError)

# Command-line flags that override settings, as (flag, settings key, type).
_OVERRIDES = [
    ("--epochs", "epochs", int),
    ("--batch-size", "batch_size", int),
    ("--lr0", "lr0", float),
    ("--gamma", "gamma", float),
    ("--w-min", "w_min", float),
    ("--t", "t", float),
    ("--beta", "beta", int),
    ("--delta", "delta", float),
    ("--ratio", "ratio", float),
    ("--seed", "seed", int),
    ("--data-seed", "data_seed", int),
    ("--noise-rate", "noise_rate", float),
    ("--n-per-class", "n_per_class", int),
    ("--ambiguity", "ambiguity", float),
    ("--dataset", "dataset", click.Choice([s.value for s in DataSource])),
    ("--dataset-path", "dataset_path", str),
    ("--target", "target", click.Choice([m.value for m in TargetMode])),
    ("--precision", "precision", click.Choice([p.value for p in Precision])),
    ("--loglevel", "loglevel", str),
]


def overrides_option(f: Callable[..., T]) -> Callable[..., T]:
    """Add one option per overridable setting."""
    for flag, key, kind in reversed(_OVERRIDES):
        f = click.option(
            flag, key, type=kind, default=None, help=f"Override {key}."
        )(f)
    return click.option(
        "--freeze-extractor/--no-freeze-extractor",
        "freeze_extractor",
        default=None,
        help="Override freeze_extractor.",
    )(f)


def _collect_overrides(kwargs: Dict[str, Any]) -> Dict[str, Any]:
    """Pop override options from the command arguments."""
    keys = [key for _, key, _ in _OVERRIDES] + ["freeze_extractor"]
    overrides = {}
    for key in keys:
        value = kwargs.pop(key, None)
        if value is not None:
            overrides[key] = value
    return overrides


def handle_errors(f: Callable[..., None]) -> Callable[..., None]:
    """Map adadf failures onto exit codes.

    Invalid settings, unreadable input and missing artifacts exit with
    status 2 and a message naming the field or location.  Other failures
    are logged and exit with status 1.
    """

    @wraps(f)
    def wrapper(*args: Any, **kwargs: Any) -> None:
        try:
            f(*args, **kwargs)
        except ValidationError as e:
            click.echo(f"Invalid settings:\n{e}", err=True)
            sys.exit(2)
        except FileNotFoundError as e:
            click.echo(f"File not found: {e.filename}", err=True)
            sys.exit(2)
        except _USAGE_ERRORS as e:
            click.echo(f"Error: {e}", err=True)
            sys.exit(2)
        except AdaDFError as e:
            logger = structlog.get_logger(LOGGER_NAME)
            logger.error("Run failed", error=str(e))
            sys.exit(1)

    return wrapper


def _factory(
    config_path: str, overrides: Optional[Dict[str, Any]] = None
) -> ComponentFactory:
    path = resolve_config_path(config_path)
    if not path.is_file():
        raise FileNotFoundError(2, "No such file", str(path))
    factory = ComponentFactory.from_file(str(path), overrides)
    click.echo("Effective configuration:")
    click.echo(factory.config.to_yaml(), nl=False)
    return factory


@click.group(context_settings={"help_option_names": ["-h", "--help"]})
@click.version_option(message="%(version)s")
def main() -> None:
    """adadf main.

    Train dual-branch classifiers with adaptive label distribution fusion
    and run the experiments around them.
    """
    pass


@main.command()
@click.argument("topic", default=None, required=False, nargs=1)
@click.pass_context
def help(ctx: click.Context, topic: Optional[str]) -> None:
    """Show help for adadf or for one of its commands."""
    root = ctx.find_root()
    if topic is None:
        click.echo(root.get_help())
        return
    command = main.get_command(root, topic)
    if command is None:
        raise click.UsageError(f"Unknown help topic {topic}", ctx)
    with click.Context(command, info_name=topic, parent=root) as sub:
        click.echo(command.get_help(sub))


@main.command()
@click.argument("config", type=str)
@click.option(
    "--output",
    "-o",
    type=click.Path(file_okay=False, path_type=Path),
    required=True,
    help="Run directory for the artifacts.",
)
@overrides_option
@handle_errors
def train(config: str, output: Path, **kwargs: Any) -> None:
    """Train one model and write its run directory."""
    factory = _factory(config, _collect_overrides(kwargs))
    store = factory.create_artifact_store(output)
    experiment_service = factory.create_experiment_service()
    result = experiment_service.train(store)
    metrics = result.metrics
    click.echo(
        f"best_test_acc={metrics.best_test_accuracy!r}"
        f" epoch={metrics.best_epoch}"
    )


@main.command()
@click.argument("config", type=str)
@click.option(
    "--run",
    "run_dir",
    type=click.Path(file_okay=False, path_type=Path),
    required=True,
    help="Run directory holding the checkpoint.",
)
@overrides_option
@handle_errors
def eval(config: str, run_dir: Path, **kwargs: Any) -> None:
    """Evaluate a trained checkpoint on the configured dataset."""
    factory = _factory(config, _collect_overrides(kwargs))
    store = factory.create_artifact_store(run_dir)
    accuracy = factory.create_experiment_service().evaluate(store)
    click.echo(
        f"train_acc={accuracy['train']!r} test_acc={accuracy['test']!r}"
    )


@main.command()
@click.argument("config", type=str)
@click.option(
    "--axis",
    type=click.Choice(ABLATION_AXES),
    required=True,
    help="Setting to vary.",
)
@click.option(
    "--values",
    "values",
    multiple=True,
    required=True,
    help="Axis values, comma-separated or repeated.",
)
@click.option(
    "--output",
    "-o",
    type=click.Path(dir_okay=False, path_type=Path),
    required=True,
    help="CSV file for the results table.",
)
@click.option(
    "--jobs", "-j", type=click.IntRange(min=1), default=1, help="Workers."
)
@overrides_option
@handle_errors
def ablate(
    config: str,
    axis: str,
    values: Tuple[str, ...],
    output: Path,
    jobs: int,
    **kwargs: Any,
) -> None:
    """Train one model per axis value and tabulate the results."""
    factory = _factory(config, _collect_overrides(kwargs))
    parsed = parse_axis_values(axis, values)
    rows = factory.create_experiment_service().ablate(axis, parsed, jobs=jobs)
    fieldnames = ["axis_value", "best_test_acc", "epoch"]
    write_csv(output, fieldnames, (r.to_row() for r in rows), factory.config)
    for row in rows:
        click.echo(
            f"{axis}={row.axis_value} best_test_acc={row.best_test_acc!r}"
            f" epoch={row.epoch}"
        )


@main.command()
@click.argument("config", type=str)
@click.option(
    "--rates",
    multiple=True,
    default=("0.1,0.2,0.3",),
    show_default=True,
    help="Noise rates, comma-separated or repeated.",
)
@click.option(
    "--bench-seed",
    "seeds",
    type=int,
    multiple=True,
    help="Seed to average over (repeatable).  Defaults to the run seed.",
)
@click.option(
    "--output",
    "-o",
    type=click.Path(dir_okay=False, path_type=Path),
    required=True,
    help="CSV file for the results table.",
)
@click.option(
    "--jobs", "-j", type=click.IntRange(min=1), default=1, help="Workers."
)
@overrides_option
@handle_errors
def noise_bench(
    config: str,
    rates: Tuple[str, ...],
    seeds: Tuple[int, ...],
    output: Path,
    jobs: int,
    **kwargs: Any,
) -> None:
    """Compare the single-label baseline with fusion under label noise."""
    factory = _factory(config, _collect_overrides(kwargs))
    try:
        parsed = parse_float_list(rates)
    except ValueError as e:
        raise ConfigError(f"Invalid noise rate: {e}")
    experiment_service = factory.create_experiment_service()
    rows = experiment_service.noise_bench(parsed, seeds=seeds, jobs=jobs)
    fieldnames = ["rate", "baseline_acc", "adadf_acc", "delta"]
    write_csv(output, fieldnames, (r.to_row() for r in rows), factory.config)
    for row in rows:
        click.echo(
            f"rate={row.rate!r} baseline_acc={row.baseline_acc!r}"
            f" adadf_acc={row.adadf_acc!r} delta={row.delta!r}"
        )


@main.command()
@click.argument("run_dir", type=click.Path(file_okay=False, path_type=Path))
@click.option(
    "--output",
    "-o",
    type=click.Path(file_okay=False, path_type=Path),
    default=None,
    help="Report directory.  Defaults to <run_dir>/report.",
)
@click.option(
    "--sample",
    "samples",
    type=int,
    multiple=True,
    help="Training-split position to trace (repeatable).  Defaults to all.",
)
@handle_errors
def report(
    run_dir: Path, output: Optional[Path], samples: Tuple[int, ...]
) -> None:
    """Write class table, fusion trace and summary files for a run."""
    configure_logging(profile="production", log_level="INFO", name=LOGGER_NAME)
    factory = ComponentFactory()
    report_service = factory.create_report_service(run_dir)
    paths = report_service.write_report(
        output or run_dir / "report", samples or None
    )
    for path in paths:
        click.echo(str(path))
