"""Tests for the run directory store."""

from __future__ import annotations

from typing import TYPE_CHECKING

import numpy as np
import pytest
import yaml

from adadf.distributions import initial_table
from adadf.exceptions import ArtifactError
from adadf.models.metrics import StepRecord
from adadf.models.report import ClassTableRecord, FusionTrace, RunSummary
from adadf.storage.artifacts import ArtifactStore, write_csv
from tests.support.models import tiny_model
from tests.support.settings import build_config

if TYPE_CHECKING:
    from pathlib import Path


def _step(step: int) -> StepRecord:
    return StepRecord(
        epoch=1,
        step=step,
        batch_size=8,
        l_ce=1.25,
        l_kld=0.5,
        l_rr=0.0,
        l_total=1.75,
        alpha1=1.0,
        alpha2=1.0,
    )


def test_write_csv(tmp_path: Path) -> None:
    path = tmp_path / "out" / "cells.csv"
    rows = [{"name": "a", "value": 0.1}, {"name": "b", "value": 2}]
    write_csv(path, ["name", "value"], rows, build_config())

    assert path.read_bytes() == b"name,value\na,0.1\nb,2\n"
    echo = yaml.safe_load((tmp_path / "out" / "cells.config.yaml").read_text())
    assert echo["seed"] == 7


def test_jsonl_records(tmp_path: Path) -> None:
    store = ArtifactStore(tmp_path / "run")
    store.write_steps([_step(1), _step(2)])

    text = store.path("steps.jsonl").read_bytes()
    assert text.count(b"\n") == 2
    assert b"\r\n" not in text
    assert [s.step for s in store.read_steps()] == [1, 2]


def test_tables_and_traces(tmp_path: Path) -> None:
    store = ArtifactStore(tmp_path)
    record = ClassTableRecord.from_table(initial_table(3, 0.7))
    store.write_tables([record])
    table = store.read_tables()[0].to_table()
    assert np.array_equal(table.rows, initial_table(3, 0.7).rows)
    assert table.fallback_classes == [0, 1, 2]

    trace = FusionTrace(
        epoch=1,
        sample=0,
        index=5,
        label=2,
        d_label=[0.2, 0.3, 0.5],
        class_row=[0.15, 0.15, 0.7],
        w=0.5,
        d_fused=[0.175, 0.225, 0.6],
    )
    store.write_traces([trace])
    assert store.read_traces() == [trace]

    store.write_tables([])
    with pytest.raises(ArtifactError):
        store.read_tables()


def test_summary_and_config(tmp_path: Path) -> None:
    config = build_config()
    store = ArtifactStore(tmp_path)
    store.write_config(config)
    assert yaml.safe_load(store.read_config_text()) == config.to_dict()

    summary = RunSummary(
        settings=config.to_dict(),
        epochs=2,
        best_test_accuracy=0.5,
        best_epoch=1,
        last_test_accuracy=0.25,
        initial_test_accuracy=0.125,
        final_table_sources=["mined", "threshold", "mined"],
    )
    store.write_summary(summary)
    assert store.read_summary() == summary


def test_checkpoint(tmp_path: Path) -> None:
    store = ArtifactStore(tmp_path)
    model = tiny_model()
    store.write_checkpoint(model, build_config())
    loaded, settings = store.read_checkpoint()
    assert settings["seed"] == 7
    assert np.array_equal(
        loaded.tar_classifier.weight.data, model.tar_classifier.weight.data
    )

    store.path("checkpoint.json").write_text("{}")
    with pytest.raises(ArtifactError):
        store.read_checkpoint()


def test_missing_and_malformed(tmp_path: Path) -> None:
    store = ArtifactStore(tmp_path)
    with pytest.raises(ArtifactError) as excinfo:
        store.read_metrics()
    assert "metrics.jsonl" in str(excinfo.value)
    with pytest.raises(ArtifactError):
        store.read_summary()

    store.write_steps([_step(1)])
    with store.path("steps.jsonl").open("a") as f:
        f.write('{"epoch": 0}\n')
    with pytest.raises(ArtifactError) as excinfo:
        store.read_steps()
    assert "line 2" in str(excinfo.value)

    store.path("summary.json").write_text("not json")
    with pytest.raises(ArtifactError):
        store.read_summary()
