"""Exceptions for adadf."""

from __future__ import annotations

from typing import TYPE_CHECKING

if TYPE_CHECKING:
    from typing import Optional, Sequence

__all__ = [
    "AdaDFError",
    "ArtifactError",
    "CheckpointError",
    "ConfigError",
    "ContractError",
    "DatasetParseError",
    "DimensionError",
]


class AdaDFError(Exception):
    """Base class for all adadf errors."""


class ContractError(AdaDFError):
    """A precondition or invariant of an operation was violated.

    Raised for invalid probability rows, labels outside the class range,
    mismatched lengths and non-scalar losses.
    """


class DimensionError(ContractError):
    """Two operands have incompatible shapes.

    Parameters
    ----------
    operation : `str`
        The name of the operation that failed.
    left : Sequence[`int`]
        Shape of the first operand.
    right : Sequence[`int`]
        Shape of the second operand.
    """

    def __init__(
        self, operation: str, left: Sequence[int], right: Sequence[int]
    ) -> None:
        msg = (
            f"{operation}: incompatible shapes {tuple(left)} and"
            f" {tuple(right)}"
        )
        super().__init__(msg)
        self.left = tuple(left)
        self.right = tuple(right)


class ConfigError(AdaDFError):
    """The model, data or run configuration is not usable."""


class DatasetParseError(AdaDFError):
    """An input CSV file could not be parsed.

    Parameters
    ----------
    message : `str`
        What was wrong.
    line : `int`
        The 1-based line number in the file (the header is line 1).
    column : `str`, optional
        The column at fault, if the problem is tied to one.
    """

    def __init__(
        self, message: str, line: int, column: Optional[str] = None
    ) -> None:
        where = f"line {line}"
        if column:
            where += f", column {column}"
        super().__init__(f"{message}, {where}")
        self.line = line
        self.column = column


class CheckpointError(AdaDFError):
    """A checkpoint could not be read or does not match the model."""


class ArtifactError(AdaDFError):
    """A run artifact is missing or malformed."""

