"""Records of training progress: per step, per epoch and per run."""

from __future__ import annotations

from typing import Any, Dict, List, Optional

from pydantic import BaseModel, Field

from adadf.losses import LossTerms

__all__ = ["EpochMetrics", "RunMetrics", "StepRecord"]


class StepRecord(BaseModel):
    """Loss terms of one optimizer step."""

    epoch: int = Field(..., title="Epoch", ge=1, example=3)

    step: int = Field(..., title="Step within the epoch", ge=1, example=12)

    batch_size: int = Field(..., title="Samples in the batch", ge=1)

    l_ce: float = Field(..., title="Cross-entropy loss")

    l_kld: float = Field(..., title="KL divergence loss")

    l_rr: float = Field(..., title="Rank regularization loss", ge=0)

    l_total: float = Field(
        ...,
        title="Joint loss",
        description=(
            "l_rr + alpha1 * l_ce + alpha2 * l_kld, or l_ce alone for the"
            " single-label baseline"
        ),
    )

    alpha1: Optional[float] = Field(
        None,
        title="Cross-entropy weight",
        description="Absent for the single-label baseline",
        gt=0,
        le=1,
    )

    alpha2: Optional[float] = Field(
        None,
        title="KL divergence weight",
        description="Absent for the single-label baseline",
        gt=0,
        le=1,
    )

    @classmethod
    def from_terms(
        cls, epoch: int, step: int, batch_size: int, terms: LossTerms
    ) -> StepRecord:
        return cls(
            epoch=epoch,
            step=step,
            batch_size=batch_size,
            l_ce=terms.l_ce,
            l_kld=terms.l_kld,
            l_rr=terms.l_rr,
            l_total=terms.l_total,
            alpha1=terms.alpha1,
            alpha2=terms.alpha2,
        )


class EpochMetrics(BaseModel):
    """Results of one completed epoch.

    Loss terms are the means over the epoch's steps.  The fidelity fields
    are mean L1 distances to the ground-truth distributions of the training
    samples and are only present when the dataset has them.
    """

    epoch: int = Field(..., title="Epoch", ge=1, example=1)

    train_accuracy: float = Field(..., title="Training accuracy", ge=0, le=1)

    test_accuracy: float = Field(..., title="Test accuracy", ge=0, le=1)

    l_ce: float = Field(..., title="Mean cross-entropy loss")

    l_kld: float = Field(..., title="Mean KL divergence loss")

    l_rr: float = Field(..., title="Mean rank regularization loss")

    l_total: float = Field(..., title="Mean joint loss")

    alpha1: Optional[float] = Field(
        None,
        title="Cross-entropy weight",
        description="Absent for the single-label baseline",
        gt=0,
        le=1,
    )

    alpha2: Optional[float] = Field(
        None,
        title="KL divergence weight",
        description="Absent for the single-label baseline",
        gt=0,
        le=1,
    )

    lr: float = Field(..., title="Learning rate used during the epoch", gt=0)

    table_sources: List[str] = Field(
        ...,
        title="Class table row sources",
        description="Source of each row of the class table used this epoch",
        example=["mined", "threshold", "mined"],
    )

    next_table_sources: List[str] = Field(
        ...,
        title="Mined class table row sources",
        description="Source of each row of the table mined from this epoch",
    )

    degenerate_batches: int = Field(
        0,
        title="Degenerate batches",
        description="Batches whose attention weights were all equal",
        ge=0,
    )

    fused_l1: Optional[float] = Field(
        None, title="Fused distribution distance to the truth", ge=0
    )

    label_l1: Optional[float] = Field(
        None, title="Label distribution distance to the truth", ge=0
    )

    onehot_l1: Optional[float] = Field(
        None, title="Annotated label distance to the truth", ge=0
    )


class RunMetrics(BaseModel):
    """Results of a whole run."""

    settings: Dict[str, Any] = Field(
        ..., title="Effective settings of the run"
    )

    initial_train_accuracy: float = Field(
        ..., title="Training accuracy before training", ge=0, le=1
    )

    initial_test_accuracy: float = Field(
        ..., title="Test accuracy before training", ge=0, le=1
    )

    epochs: List[EpochMetrics] = Field(
        ..., title="One record per completed epoch"
    )

    best_test_accuracy: float = Field(
        ...,
        title="Best test accuracy",
        description=(
            "Highest test accuracy over completed epochs, or the initial"
            " accuracy when no epoch ran"
        ),
        ge=0,
        le=1,
    )

    best_epoch: int = Field(
        ...,
        title="Epoch of the best test accuracy",
        description="Earliest epoch reaching the best accuracy, 0 if none ran",
        ge=0,
    )

    last_test_accuracy: float = Field(
        ..., title="Test accuracy after the last epoch", ge=0, le=1
    )
