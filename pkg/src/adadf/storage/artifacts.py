"""Storage for the artifacts of a training run."""

from __future__ import annotations

import csv
from pathlib import Path
from typing import TYPE_CHECKING

from pydantic import ValidationError

from adadf.constants import (
    CHECKPOINT_FILE,
    CONFIG_FILE,
    METRICS_FILE,
    STEPS_FILE,
    SUMMARY_FILE,
    TABLES_FILE,
    TRACE_FILE,
)
from adadf.exceptions import ArtifactError, CheckpointError
from adadf.models.metrics import EpochMetrics, StepRecord
from adadf.models.report import ClassTableRecord, FusionTrace, RunSummary
from adadf.network import load_checkpoint, save_checkpoint

if TYPE_CHECKING:
    from typing import (
        Any,
        Dict,
        Iterable,
        List,
        Sequence,
        Tuple,
        Type,
        TypeVar,
    )

    from pydantic import BaseModel

    from adadf.config import RunConfig
    from adadf.network import DualBranchModel

    T = TypeVar("T", bound=BaseModel)

__all__ = ["ArtifactStore", "write_config_echo", "write_csv"]


def write_csv(
    path: Path,
    fieldnames: Sequence[str],
    rows: Iterable[Dict[str, Any]],
    config: RunConfig,
) -> None:
    """Write a CSV file and echo the configuration next to it.

    The configuration goes to ``<name>.config.yaml`` beside the CSV so that
    the CSV itself holds only the header and data rows.

    Parameters
    ----------
    path : `pathlib.Path`
        Destination of the CSV.
    fieldnames : Sequence[`str`]
        Header row, also the keys of each row.
    rows : Iterable[Dict[`str`, Any]]
        The data rows.
    config : `adadf.config.RunConfig`
        The effective configuration that produced the rows.
    """
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=fieldnames, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _format(v) for k, v in row.items()})
    write_config_echo(path, config)


def write_config_echo(path: Path, config: RunConfig) -> None:
    """Write the configuration to ``<name>.config.yaml`` beside ``path``."""
    echo = path.with_name(path.stem + ".config.yaml")
    with echo.open("w", newline="\n") as f:
        f.write(config.to_yaml())


def _format(value: Any) -> Any:
    if isinstance(value, float):
        return repr(value)
    return value


class ArtifactStore:
    """Reads and writes the files of one run directory.

    A run directory holds the effective configuration, the per-epoch
    metrics, the per-step losses, the class table of every epoch, the
    fusion traces, the final checkpoint and a summary.  JSON lines files
    hold one record per line with LF line endings.

    Parameters
    ----------
    directory : `pathlib.Path`
        The run directory.  Created on the first write.
    """

    def __init__(self, directory: Path) -> None:
        self._directory = Path(directory)

    @property
    def directory(self) -> Path:
        return self._directory

    def path(self, name: str) -> Path:
        """Path of a file in the run directory."""
        return self._directory / name

    def write_config(self, config: RunConfig) -> None:
        self._write_text(CONFIG_FILE, config.to_yaml())

    def write_metrics(self, epochs: Sequence[EpochMetrics]) -> None:
        """Write one line per completed epoch."""
        self._write_lines(METRICS_FILE, epochs)

    def write_steps(self, steps: Sequence[StepRecord]) -> None:
        self._write_lines(STEPS_FILE, steps)

    def write_tables(self, tables: Sequence[ClassTableRecord]) -> None:
        self._write_lines(TABLES_FILE, tables)

    def write_traces(self, traces: Sequence[FusionTrace]) -> None:
        self._write_lines(TRACE_FILE, traces)

    def write_checkpoint(
        self, model: DualBranchModel, config: RunConfig
    ) -> None:
        self._directory.mkdir(parents=True, exist_ok=True)
        save_checkpoint(model, self.path(CHECKPOINT_FILE), config.to_dict())

    def write_summary(self, summary: RunSummary) -> None:
        self._write_text(SUMMARY_FILE, summary.json(indent=2) + "\n")

    def read_config_text(self) -> str:
        """Return the effective configuration exactly as written."""
        path = self._require(CONFIG_FILE)
        return path.read_text()

    def read_metrics(self) -> List[EpochMetrics]:
        return self._read_lines(METRICS_FILE, EpochMetrics)

    def read_steps(self) -> List[StepRecord]:
        return self._read_lines(STEPS_FILE, StepRecord)

    def read_tables(self) -> List[ClassTableRecord]:
        """Return the logged class tables, oldest first.

        Raises
        ------
        adadf.exceptions.ArtifactError
            The tables file is missing or holds no table.
        """
        tables = self._read_lines(TABLES_FILE, ClassTableRecord)
        if not tables:
            msg = f"No class tables in {self.path(TABLES_FILE)}"
            raise ArtifactError(msg)
        return tables

    def read_traces(self) -> List[FusionTrace]:
        return self._read_lines(TRACE_FILE, FusionTrace)

    def read_summary(self) -> RunSummary:
        path = self._require(SUMMARY_FILE)
        try:
            return RunSummary.parse_file(path)
        except (ValidationError, ValueError) as e:
            raise ArtifactError(f"Malformed {path}: {e}")

    def read_checkpoint(self) -> Tuple[DualBranchModel, Dict[str, Any]]:
        path = self._require(CHECKPOINT_FILE)
        try:
            return load_checkpoint(path)
        except CheckpointError as e:
            raise ArtifactError(str(e))

    def _require(self, name: str) -> Path:
        path = self.path(name)
        if not path.is_file():
            raise ArtifactError(f"Missing run artifact {path}")
        return path

    def _read_lines(self, name: str, model: Type[T]) -> List[T]:
        path = self._require(name)
        records = []
        with path.open("r") as f:
            for number, line in enumerate(f, start=1):
                if not line.strip():
                    continue
                try:
                    records.append(model.parse_raw(line))
                except (ValidationError, ValueError) as e:
                    msg = f"Malformed record in {path}, line {number}: {e}"
                    raise ArtifactError(msg)
        return records

    def _write_lines(self, name: str, records: Iterable[BaseModel]) -> None:
        text = "".join(record.json() + "\n" for record in records)
        self._write_text(name, text)

    def _write_text(self, name: str, text: str) -> None:
        self._directory.mkdir(parents=True, exist_ok=True)
        with self.path(name).open("w", newline="\n") as f:
            f.write(text)
