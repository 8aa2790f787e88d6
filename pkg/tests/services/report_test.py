"""Tests for the report service."""

from __future__ import annotations

import csv
import json
from typing import TYPE_CHECKING

import pytest
import structlog

from adadf.constants import LOGGER_NAME
from adadf.exceptions import ArtifactError
from adadf.services.experiment import ExperimentService
from adadf.services.report import ReportService
from adadf.storage.artifacts import ArtifactStore
from tests.support.settings import build_config

if TYPE_CHECKING:
    from pathlib import Path
    from typing import List

    from adadf.trainer import RunResult


def _read_csv(path: Path) -> List[List[str]]:
    with path.open("r", newline="") as f:
        return list(csv.reader(f))


def _trained(tmp_path: Path) -> RunResult:
    logger = structlog.get_logger(LOGGER_NAME)
    service = ExperimentService(build_config(), logger)
    return service.train(ArtifactStore(tmp_path / "run"))


def _report_service(tmp_path: Path) -> ReportService:
    store = ArtifactStore(tmp_path / "run")
    return ReportService(store, structlog.get_logger(LOGGER_NAME))


def test_write_report(tmp_path: Path) -> None:
    result = _trained(tmp_path)
    output = tmp_path / "report"
    paths = _report_service(tmp_path).write_report(output)

    assert [p.name for p in paths] == [
        "class_table.csv",
        "class_tables_by_epoch.csv",
        "fusion_trace.csv",
        "summary.json",
    ]

    table = _read_csv(output / "class_table.csv")
    assert table[0] == ["class_0", "class_1", "class_2"]
    assert len(table) == 4
    for row in table[1:]:
        assert abs(sum(float(v) for v in row) - 1.0) <= 1e-6
    assert [float(v) for v in table[1]] == result.tables[-1].rows[0]

    tables = _read_csv(output / "class_tables_by_epoch.csv")
    assert tables[0] == [
        "epoch",
        "class",
        "source",
        "class_0",
        "class_1",
        "class_2",
    ]
    assert len(tables) == 1 + 3 * 3
    assert tables[1][:3] == ["0", "0", "threshold"]

    trace = _read_csv(output / "fusion_trace.csv")
    assert trace[0][:5] == ["sample", "index", "epoch", "label", "w"]
    assert len(trace[0]) == 5 + 3 * 3
    assert [(row[0], row[2]) for row in trace[1:]] == [
        ("0", "1"),
        ("0", "2"),
        ("1", "1"),
        ("1", "2"),
    ]
    assert (output / "fusion_trace.config.yaml").is_file()
    assert (output / "class_table.config.yaml").is_file()

    summary = json.loads((output / "summary.json").read_text())
    assert summary["best_epoch"] == result.metrics.best_epoch
    assert summary["settings"]["trace_samples"] == [0, 1]


def test_write_trace_samples(tmp_path: Path) -> None:
    _trained(tmp_path)
    service = _report_service(tmp_path)
    config = service.config()
    path = tmp_path / "trace.csv"

    service.write_trace(path, service.select_traces([1, 0, 1]), config)
    rows = _read_csv(path)
    assert [row[0] for row in rows[1:]] == ["1", "1", "0", "0"]

    with pytest.raises(ArtifactError) as excinfo:
        service.select_traces([7])
    assert "Sample index 7 was not traced" in str(excinfo.value)


def test_write_report_untraced_sample(tmp_path: Path) -> None:
    _trained(tmp_path)
    output = tmp_path / "report"
    service = _report_service(tmp_path)

    with pytest.raises(ArtifactError):
        service.write_report(output, [0, 99])
    assert not output.exists()

    output.mkdir()
    with pytest.raises(ArtifactError):
        service.write_report(output, [99])
    assert list(output.iterdir()) == []


def test_malformed_config(tmp_path: Path) -> None:
    _trained(tmp_path)
    service = _report_service(tmp_path)
    config_path = tmp_path / "run" / "config.yaml"

    config_path.write_text("- not\n- a mapping\n")
    with pytest.raises(ArtifactError):
        service.config()

    config_path.write_text("batch_size: 1\n")
    with pytest.raises(ArtifactError):
        service.config()

    config_path.unlink()
    with pytest.raises(ArtifactError):
        service.write_report(tmp_path / "report")
    assert not (tmp_path / "report").exists()
