"""Assemble report tables from the artifacts of a run."""

from __future__ import annotations

from typing import TYPE_CHECKING

import yaml
from pydantic import ValidationError

from adadf.config import RunConfig
from adadf.exceptions import ArtifactError
from adadf.storage.artifacts import write_config_echo, write_csv

if TYPE_CHECKING:
    from pathlib import Path
    from typing import Any, Dict, List, Optional, Sequence

    from structlog.stdlib import BoundLogger

    from adadf.models.report import ClassTableRecord, FusionTrace, RunSummary
    from adadf.storage.artifacts import ArtifactStore

__all__ = [
    "CLASS_TABLE_CSV",
    "ReportService",
    "SUMMARY_JSON",
    "TABLES_CSV",
    "TRACE_CSV",
]

CLASS_TABLE_CSV = "class_table.csv"
TABLES_CSV = "class_tables_by_epoch.csv"
TRACE_CSV = "fusion_trace.csv"
SUMMARY_JSON = "summary.json"


def _columns(prefix: str, n: int) -> List[str]:
    return [f"{prefix}_{j}" for j in range(n)]


class ReportService:
    """Produce plot-ready report files from a completed run.

    Parameters
    ----------
    store : `adadf.storage.artifacts.ArtifactStore`
        The run directory to read.
    logger : `structlog.stdlib.BoundLogger`
        Logger to use.
    """

    def __init__(self, store: ArtifactStore, logger: BoundLogger) -> None:
        self._store = store
        self._logger = logger.bind(run=str(store.directory))

    def config(self) -> RunConfig:
        """Return the effective configuration of the run.

        Raises
        ------
        adadf.exceptions.ArtifactError
            The configuration is missing or no longer validates.
        """
        text = self._store.read_config_text()
        try:
            data = yaml.safe_load(text)
            if not isinstance(data, dict):
                raise ArtifactError("Run configuration is not a mapping")
            return RunConfig.from_mapping(data)
        except (yaml.YAMLError, ValidationError) as e:
            raise ArtifactError(f"Malformed run configuration: {e}")

    def write_report(
        self, output: Path, samples: Optional[Sequence[int]] = None
    ) -> List[Path]:
        """Write every report file into ``output``.

        Every artifact is read and the requested samples are checked before
        anything is written, so a failure leaves ``output`` untouched.

        Parameters
        ----------
        output : `pathlib.Path`
            Directory to write the report into.
        samples : Sequence[`int`], optional
            Training-split positions to include in the fusion trace.  All
            traced samples by default.

        Returns
        -------
        paths : List[`pathlib.Path`]
            The files written.

        Raises
        ------
        adadf.exceptions.ArtifactError
            An artifact is missing or malformed, or a requested sample was
            not traced.
        """
        config = self.config()
        tables = self._store.read_tables()
        traces = self.select_traces(samples)
        summary = self._store.read_summary()

        output.mkdir(parents=True, exist_ok=True)
        paths = [
            self.write_class_table(output / CLASS_TABLE_CSV, tables, config),
            self.write_tables(output / TABLES_CSV, tables, config),
            self.write_trace(output / TRACE_CSV, traces, config),
            self.write_summary(output / SUMMARY_JSON, summary),
        ]
        self._logger.info(
            "Wrote report", output=str(output), files=[p.name for p in paths]
        )
        return paths

    def select_traces(
        self, samples: Optional[Sequence[int]] = None
    ) -> List[FusionTrace]:
        """Return the traces of the requested samples.

        Traces are grouped by sample in request order, then sorted by
        epoch.  Repeated samples are included once.

        Raises
        ------
        adadf.exceptions.ArtifactError
            A requested sample was not traced during the run.
        """
        traces = self._store.read_traces()
        traced = sorted({trace.sample for trace in traces})
        if samples is None:
            selected = traced
        else:
            for sample in samples:
                if sample not in traced:
                    msg = (
                        f"Sample index {sample} was not traced, traced"
                        f" samples are {traced}"
                    )
                    raise ArtifactError(msg)
            selected = list(dict.fromkeys(samples))
        wanted = set(selected)
        chosen = [t for t in traces if t.sample in wanted]
        chosen.sort(key=lambda t: (selected.index(t.sample), t.epoch))
        return chosen

    def write_class_table(
        self,
        path: Path,
        tables: Sequence[ClassTableRecord],
        config: RunConfig,
    ) -> Path:
        """Write the last mined class table, one row per class."""
        table = tables[-1].to_table()
        with path.open("w", newline="") as f:
            table.to_csv(f)
        write_config_echo(path, config)
        return path

    def write_tables(
        self,
        path: Path,
        tables: Sequence[ClassTableRecord],
        config: RunConfig,
    ) -> Path:
        """Write every epoch's class table in long form.

        One row per epoch and class, with the row source.  Epoch 0 is the
        threshold table used during the first epoch.
        """
        num_classes = len(tables[0].rows)
        columns = _columns("class", num_classes)
        rows = []
        for table in tables:
            for c, (row, source) in enumerate(zip(table.rows, table.sources)):
                record: Dict[str, Any] = {
                    "epoch": table.epoch,
                    "class": c,
                    "source": source,
                }
                record.update(zip(columns, row))
                rows.append(record)
        write_csv(path, ["epoch", "class", "source", *columns], rows, config)
        return path

    def write_trace(
        self,
        path: Path,
        traces: Sequence[FusionTrace],
        config: RunConfig,
    ) -> Path:
        """Write the per-epoch fusion of traced samples."""
        n = config.model.num_classes
        fieldnames = [
            "sample",
            "index",
            "epoch",
            "label",
            "w",
            *_columns("d_label", n),
            *_columns("class_row", n),
            *_columns("d_fused", n),
        ]
        write_csv(path, fieldnames, (_trace_row(t) for t in traces), config)
        return path

    def write_summary(self, path: Path, summary: RunSummary) -> Path:
        """Copy the run summary, which embeds the effective settings."""
        with path.open("w", newline="\n") as f:
            f.write(summary.json(indent=2) + "\n")
        return path


def _trace_row(trace: FusionTrace) -> Dict[str, Any]:
    row: Dict[str, Any] = {
        "sample": trace.sample,
        "index": trace.index,
        "epoch": trace.epoch,
        "label": trace.label,
        "w": trace.w,
    }
    for name in ("d_label", "class_row", "d_fused"):
        values = getattr(trace, name)
        row.update(zip(_columns(name, len(values)), values))
    return row
