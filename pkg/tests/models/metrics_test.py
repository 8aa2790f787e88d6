"""Tests for the training records."""

from __future__ import annotations

import pytest
from pydantic import ValidationError

from adadf.losses import LossTerms
from adadf.models.checkpoint import ParameterRecord
from adadf.models.metrics import EpochMetrics, StepRecord


def test_step_record_from_terms() -> None:
    terms = LossTerms(
        l_ce=1.0, l_kld=0.5, l_rr=0.25, l_total=1.75, alpha1=1.0, alpha2=1.0
    )
    record = StepRecord.from_terms(2, 3, 8, terms)
    assert (record.epoch, record.step, record.batch_size) == (2, 3, 8)
    assert record.l_total == 1.75

    with pytest.raises(ValidationError):
        StepRecord.from_terms(0, 1, 8, terms)


def test_epoch_metrics_bounds() -> None:
    fields = {
        "epoch": 1,
        "train_accuracy": 0.5,
        "test_accuracy": 0.5,
        "l_ce": 1.0,
        "l_kld": 0.5,
        "l_rr": 0.0,
        "l_total": 1.5,
        "alpha1": 1.0,
        "alpha2": 0.5,
        "lr": 0.001,
        "table_sources": ["threshold", "threshold"],
        "next_table_sources": ["mined", "threshold"],
    }
    metrics = EpochMetrics(**fields)
    assert metrics.degenerate_batches == 0
    assert metrics.fused_l1 is None

    with pytest.raises(ValidationError):
        EpochMetrics(**{**fields, "test_accuracy": 1.5})
    with pytest.raises(ValidationError):
        EpochMetrics(**{**fields, "alpha2": 0.0})


def test_parameter_record_shape() -> None:
    record = ParameterRecord(name="p", shape=[2, 2], data=[1, 2, 3, 4])
    assert record.data == [1.0, 2.0, 3.0, 4.0]
    with pytest.raises(ValidationError):
        ParameterRecord(name="p", shape=[2, 2], data=[1.0])
