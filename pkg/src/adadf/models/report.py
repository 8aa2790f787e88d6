"""Records behind the report: class tables, fusion traces and summaries."""

from __future__ import annotations

from typing import Any, Dict, List, Optional

import numpy as np
from pydantic import BaseModel

from adadf.distributions import ClassDistributionTable, RowSource

__all__ = ["ClassTableRecord", "FusionTrace", "RunSummary"]


class ClassTableRecord(BaseModel):
    """A class distribution table as logged after each epoch."""

    epoch: int
    """Epoch whose label distributions were mined, 0 for the initial table."""

    rows: List[List[float]]
    """Row c is the distribution of class c."""

    sources: List[str]
    """``mined`` or ``threshold`` for each row."""

    @classmethod
    def from_table(cls, table: ClassDistributionTable) -> ClassTableRecord:
        return cls(
            epoch=table.epoch,
            rows=[[float(v) for v in row] for row in table.rows],
            sources=[s.value for s in table.sources],
        )

    def to_table(self) -> ClassDistributionTable:
        return ClassDistributionTable(
            rows=np.array(self.rows, dtype=np.float64),
            sources=tuple(RowSource(s) for s in self.sources),
            epoch=self.epoch,
        )


class FusionTrace(BaseModel):
    """How one traced training sample was fused during one epoch."""

    epoch: int
    """Epoch of the fusion."""

    sample: int
    """Position of the sample in the training split."""

    index: int
    """Row of the sample in the dataset."""

    label: int
    """Annotated label used for the class row."""

    d_label: List[float]
    """Label distribution from the auxiliary branch."""

    class_row: List[float]
    """Class table row of the annotated label."""

    w: float
    """Normalized attention weight."""

    d_fused: List[float]
    """The fused distribution."""


class RunSummary(BaseModel):
    """The metrics summary of a run, written as JSON."""

    settings: Dict[str, Any]
    """Effective settings of the run."""

    epochs: int
    """Number of completed epochs."""

    best_test_accuracy: float
    """Best test accuracy over completed epochs."""

    best_epoch: int
    """Epoch reaching the best test accuracy."""

    last_test_accuracy: float
    """Test accuracy after the last epoch."""

    initial_test_accuracy: float
    """Test accuracy before training."""

    final_table_sources: List[str]
    """Row sources of the last mined class table."""

    fused_l1: Optional[float] = None
    """Final-epoch mean L1 distance of fused distributions to the truth."""

    label_l1: Optional[float] = None
    """Final-epoch mean L1 distance of label distributions to the truth."""

    onehot_l1: Optional[float] = None
    """Mean L1 distance of annotated labels to the truth."""
