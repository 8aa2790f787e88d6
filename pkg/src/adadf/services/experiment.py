"""Run training, evaluation and experiment grids."""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import TYPE_CHECKING

from adadf.config import RunConfig, TargetMode
from adadf.data import load_dataset
from adadf.exceptions import ConfigError
from adadf.models.report import RunSummary
from adadf.trainer import Trainer, evaluate
from adadf.util import parse_float_list, parse_int_list

if TYPE_CHECKING:
    from typing import Any, Dict, Iterable, List, Sequence, Tuple, Union

    from structlog.stdlib import BoundLogger

    from adadf.storage.artifacts import ArtifactStore
    from adadf.trainer import RunResult

    AxisValue = Union[float, int, str]

__all__ = [
    "ABLATION_AXES",
    "AblationRow",
    "ExperimentService",
    "NoiseRow",
    "parse_axis_values",
]

ABLATION_AXES = ("w_min", "t", "beta", "target")
"""Settings an ablation grid may vary."""

_TARGET_ORDER = [m.value for m in TargetMode]


@dataclass(frozen=True)
class AblationRow:
    """One cell of an ablation grid."""

    axis_value: AxisValue
    best_test_acc: float
    epoch: int

    def to_row(self) -> Dict[str, Any]:
        return {
            "axis_value": self.axis_value,
            "best_test_acc": self.best_test_acc,
            "epoch": self.epoch,
        }


@dataclass(frozen=True)
class NoiseRow:
    """Baseline and full method at one noise rate, averaged over seeds."""

    rate: float
    baseline_acc: float
    adadf_acc: float

    @property
    def delta(self) -> float:
        return self.adadf_acc - self.baseline_acc

    def to_row(self) -> Dict[str, Any]:
        return {
            "rate": self.rate,
            "baseline_acc": self.baseline_acc,
            "adadf_acc": self.adadf_acc,
            "delta": self.delta,
        }


def parse_axis_values(axis: str, values: Iterable[str]) -> List[AxisValue]:
    """Parse command-line values of an ablation axis.

    Parameters
    ----------
    axis : `str`
        One of `ABLATION_AXES`.
    values : Iterable[`str`]
        Comma-separated or repeated raw values.

    Returns
    -------
    parsed : List
        Floats for ``w_min`` and ``t``, integers for ``beta`` and target
        mode names for ``target``.

    Raises
    ------
    adadf.exceptions.ConfigError
        The axis is unknown or a value does not parse.
    """
    if axis not in ABLATION_AXES:
        msg = f"Unknown ablation axis {axis}, expected one of {ABLATION_AXES}"
        raise ConfigError(msg)
    try:
        if axis == "beta":
            return list(parse_int_list(values))
        if axis == "target":
            modes = [p.strip() for v in values for p in v.split(",")]
            result: List[AxisValue] = []
            for mode in (m for m in modes if m):
                result.append(TargetMode(mode).value)
            return result
        return list(parse_float_list(values))
    except ValueError as e:
        raise ConfigError(f"Invalid value for axis {axis}: {e}")


def _run_cell(settings: Dict[str, Any]) -> Tuple[float, int]:
    """Train one grid cell.  Runs in a worker process when parallel."""
    config = RunConfig.from_mapping(settings)
    metrics = Trainer(config).run().metrics
    return metrics.best_test_accuracy, metrics.best_epoch


class ExperimentService:
    """Train models and run experiment grids.

    Parameters
    ----------
    config : `adadf.config.RunConfig`
        The base configuration.  Grid cells override some of its settings.
    logger : `structlog.stdlib.BoundLogger`
        Logger to use.
    """

    def __init__(self, config: RunConfig, logger: BoundLogger) -> None:
        self._config = config
        self._logger = logger

    def train(self, store: ArtifactStore) -> RunResult:
        """Train one model and write every artifact of the run.

        Parameters
        ----------
        store : `adadf.storage.artifacts.ArtifactStore`
            The run directory to write.

        Returns
        -------
        result : `adadf.trainer.RunResult`
            The metrics and trained model.
        """
        config = self._config
        logger = self._logger.bind(run=str(store.directory))
        result = Trainer(config, logger).run()
        metrics = result.metrics
        last = metrics.epochs[-1] if metrics.epochs else None
        summary = RunSummary(
            settings=metrics.settings,
            epochs=len(metrics.epochs),
            best_test_accuracy=metrics.best_test_accuracy,
            best_epoch=metrics.best_epoch,
            last_test_accuracy=metrics.last_test_accuracy,
            initial_test_accuracy=metrics.initial_test_accuracy,
            final_table_sources=result.tables[-1].sources,
            fused_l1=last.fused_l1 if last else None,
            label_l1=last.label_l1 if last else None,
            onehot_l1=last.onehot_l1 if last else None,
        )
        store.write_config(config)
        store.write_metrics(metrics.epochs)
        store.write_steps(result.steps)
        store.write_tables(result.tables)
        store.write_traces(result.traces)
        store.write_checkpoint(result.model, config)
        store.write_summary(summary)
        return result

    def evaluate(self, store: ArtifactStore) -> Dict[str, float]:
        """Evaluate the checkpoint of a run on the configured dataset.

        Returns
        -------
        accuracy : Dict[`str`, `float`]
            Accuracy on the ``train`` and ``test`` splits.

        Raises
        ------
        adadf.exceptions.ArtifactError
            The run has no readable checkpoint.
        adadf.exceptions.ConfigError
            The dataset does not fit the checkpointed model.
        """
        model, _ = store.read_checkpoint()
        ds = load_dataset(self._config.data)
        if ds.feature_dim != model.config.input_dim:
            msg = (
                f"dataset has {ds.feature_dim} features, checkpoint expects"
                f" {model.config.input_dim}"
            )
            raise ConfigError(msg)
        if ds.num_classes != model.config.num_classes:
            msg = (
                f"dataset has {ds.num_classes} classes, checkpoint expects"
                f" {model.config.num_classes}"
            )
            raise ConfigError(msg)
        accuracy = {
            "train": evaluate(model, ds, "train"),
            "test": evaluate(model, ds, "test"),
        }
        self._logger.info(
            "Evaluated checkpoint",
            run=str(store.directory),
            train_accuracy=accuracy["train"],
            test_accuracy=accuracy["test"],
        )
        return accuracy

    def ablate(
        self, axis: str, values: Sequence[AxisValue], *, jobs: int = 1
    ) -> List[AblationRow]:
        """Train one model per value of an ablation axis.

        Every cell uses the base seed.  Rows are ordered by axis value, and
        target modes in the order fused, label, class, single.

        Raises
        ------
        adadf.exceptions.ConfigError
            The axis is unknown or fewer than two distinct values are given.
        pydantic.ValidationError
            A value is out of range for its setting.
        """
        if axis not in ABLATION_AXES:
            msg = f"Unknown ablation axis {axis}, expected {ABLATION_AXES}"
            raise ConfigError(msg)
        if axis == "target":
            ordered = sorted(set(values), key=lambda v: _TARGET_ORDER.index(v))
        else:
            ordered = sorted(set(values))
        if len(ordered) < 2:
            raise ConfigError("An ablation needs at least two values")

        cells = [self._cell({axis: value}) for value in ordered]
        self._logger.info(
            "Starting ablation", axis=axis, values=list(ordered), jobs=jobs
        )
        results = self._run_cells(cells, jobs)
        rows = [
            AblationRow(axis_value=value, best_test_acc=acc, epoch=epoch)
            for value, (acc, epoch) in zip(ordered, results)
        ]
        for row in rows:
            self._logger.info(
                "Ablation cell finished",
                axis=axis,
                axis_value=row.axis_value,
                best_test_accuracy=row.best_test_acc,
                best_epoch=row.epoch,
            )
        return rows

    def noise_bench(
        self,
        rates: Sequence[float],
        *,
        seeds: Sequence[int] = (),
        jobs: int = 1,
    ) -> List[NoiseRow]:
        """Compare the single-label baseline with the full method.

        For every rate and seed, both methods train on the same noisy
        dataset from the same initialization.  Accuracies are averaged over
        seeds.

        Parameters
        ----------
        rates : Sequence[`float`]
            Noise rates, each in [0, 1).  Rows keep this order.
        seeds : Sequence[`int`], optional
            Seeds to average over.  Defaults to the base seed.
        jobs : `int`, optional
            Number of worker processes.

        Raises
        ------
        adadf.exceptions.ConfigError
            No rates are given or a rate is outside [0, 1).
        """
        if not rates:
            raise ConfigError("At least one noise rate is required")
        for rate in rates:
            if not 0.0 <= rate < 1.0:
                raise ConfigError(f"Noise rate {rate} outside [0, 1)")
        seeds = list(seeds) or [self._config.seed]

        cells = []
        for rate in rates:
            for seed in seeds:
                for target in (TargetMode.single, TargetMode.fused):
                    cells.append(
                        self._cell(
                            {
                                "noise_rate": rate,
                                "seed": seed,
                                "target": target.value,
                            }
                        )
                    )
        self._logger.info(
            "Starting noise benchmark",
            rates=list(rates),
            seeds=seeds,
            jobs=jobs,
        )
        results = iter(self._run_cells(cells, jobs))

        rows = []
        for rate in rates:
            baseline = []
            full = []
            for _ in seeds:
                baseline.append(next(results)[0])
                full.append(next(results)[0])
            row = NoiseRow(
                rate=rate,
                baseline_acc=sum(baseline) / len(baseline),
                adadf_acc=sum(full) / len(full),
            )
            self._logger.info(
                "Noise rate finished",
                rate=rate,
                baseline_accuracy=row.baseline_acc,
                adadf_accuracy=row.adadf_acc,
                delta=row.delta,
            )
            rows.append(row)
        return rows

    def _cell(self, overrides: Dict[str, Any]) -> Dict[str, Any]:
        """Validated settings of one grid cell."""
        return self._config.with_overrides(**overrides).to_dict()

    def _run_cells(
        self, cells: List[Dict[str, Any]], jobs: int
    ) -> List[Tuple[float, int]]:
        """Train every cell and return results in cell order."""
        if jobs < 1:
            raise ConfigError(f"jobs must be positive, got {jobs}")
        if jobs == 1 or len(cells) == 1:
            return [_run_cell(cell) for cell in cells]
        with ProcessPoolExecutor(max_workers=jobs) as executor:
            return list(executor.map(_run_cell, cells))
