"""Representation of a saved model checkpoint."""

from __future__ import annotations

from typing import Any, Dict, List

from pydantic import BaseModel, Field, validator

__all__ = ["CheckpointModel", "ParameterRecord"]


class ParameterRecord(BaseModel):
    """One named parameter array of a model."""

    name: str = Field(
        ...,
        title="Parameter name",
        example="tar_branch.0.weight",
        min_length=1,
    )

    shape: List[int] = Field(..., title="Shape of the array", example=[64, 32])

    data: List[float] = Field(
        ...,
        title="Values",
        description="Values of the array in row-major order",
    )

    @validator("data")
    def _data_matches_shape(
        cls, v: List[float], values: Dict[str, Any]
    ) -> List[float]:
        shape = values.get("shape")
        if shape is not None:
            size = 1
            for dim in shape:
                size *= dim
            if size != len(v):
                raise ValueError(f"{len(v)} values do not fill shape {shape}")
        return v


class CheckpointModel(BaseModel):
    """A versioned dump of a dual-branch model.

    Floats are written with their shortest round-tripping representation, so
    loading a checkpoint reproduces every parameter bit for bit.
    """

    version: int = Field(..., title="Checkpoint format version", example=1)

    model: Dict[str, Any] = Field(
        ...,
        title="Model configuration",
        description="Fields of the model configuration the arrays belong to",
    )

    settings: Dict[str, Any] = Field(
        default_factory=dict,
        title="Run settings",
        description="Effective settings of the run that produced the model",
    )

    parameters: List[ParameterRecord] = Field(
        ..., title="Parameters", description="Every parameter in model order"
    )
