"""Label distributions, class distribution mining and adaptive fusion.

Label distributions come from the auxiliary branch.  Averaging them per
annotated class gives the class distribution table, whose unstable rows fall
back to threshold distributions.  Each sample's fused distribution mixes its
class row and its own label distribution according to its normalized
attention weight.

Everything here except `average_attention` works on detached numpy arrays:
label distributions, normalized weights and fused distributions are
supervision targets, not differentiable quantities.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from enum import Enum
from typing import TYPE_CHECKING

import numpy as np

from adadf.autodiff import Tensor, add, mul
from adadf.constants import PROB_TOLERANCE
from adadf.exceptions import ContractError, DimensionError

if TYPE_CHECKING:
    from typing import List, Optional, Sequence, TextIO, Tuple, Union

__all__ = [
    "ClassAccumulator",
    "ClassDistributionTable",
    "RowSource",
    "average_attention",
    "check_labels",
    "check_prob_rows",
    "extract_label_distributions",
    "fuse",
    "initial_table",
    "mean_l1",
    "mine_class_distributions",
    "normalize_weights",
    "one_hot",
    "threshold_distribution",
]


class RowSource(Enum):
    """Where a row of the class distribution table came from."""

    mined = "mined"
    threshold = "threshold"


def check_prob_rows(
    rows: np.ndarray, what: str, tolerance: float = PROB_TOLERANCE
) -> None:
    """Check that every row is a probability vector.

    Raises
    ------
    adadf.exceptions.ContractError
        A row has a negative or non-finite entry or does not sum to 1
        within the tolerance.
    """
    if rows.ndim != 2:
        raise ContractError(f"{what} must be a matrix, got shape {rows.shape}")
    if not np.all(np.isfinite(rows)):
        raise ContractError(f"{what} has non-finite entries")
    negative = np.flatnonzero((rows < 0).any(axis=1))
    if negative.size:
        raise ContractError(f"{what} row {negative[0]} has negative entries")
    sums = rows.sum(axis=1)
    bad = np.flatnonzero(np.abs(sums - 1.0) > tolerance)
    if bad.size:
        i = bad[0]
        raise ContractError(f"{what} row {i} sums to {sums[i]!r}, not 1")


def check_labels(labels: np.ndarray, num_classes: int) -> np.ndarray:
    """Return labels as int64 after checking they lie in [0, C)."""
    array = np.asarray(labels)
    if array.ndim != 1:
        raise ContractError(f"labels must be a vector, got {array.shape}")
    if array.size and array.dtype.kind == "f":
        if not np.all(array == np.floor(array)):
            raise ContractError("labels must be integers")
    array = array.astype(np.int64)
    out_of_range = np.flatnonzero((array < 0) | (array >= num_classes))
    if out_of_range.size:
        i = out_of_range[0]
        msg = f"label {array[i]} of sample {i} outside [0, {num_classes})"
        raise ContractError(msg)
    return array


def one_hot(labels: np.ndarray, num_classes: int) -> np.ndarray:
    """Encode class ids as one-hot rows."""
    labels = check_labels(labels, num_classes)
    rows = np.zeros((labels.size, num_classes))
    rows[np.arange(labels.size), labels] = 1.0
    return rows


def mean_l1(a: np.ndarray, b: np.ndarray) -> float:
    """Mean over rows of the L1 distance between two sets of rows."""
    if a.shape != b.shape:
        raise DimensionError("mean_l1", a.shape, b.shape)
    return float(np.abs(a - b).sum(axis=1).mean())


def threshold_distribution(c: int, t: float, num_classes: int) -> np.ndarray:
    """Return the threshold distribution of class ``c``.

    Entry ``c`` is ``t`` and every other entry is ``(1 - t) / (C - 1)``.

    Raises
    ------
    adadf.exceptions.ContractError
        ``t`` is outside (0, 1), there are fewer than two classes or ``c``
        is not a class.
    """
    if not 0.0 < t < 1.0:
        raise ContractError(f"threshold t={t} outside (0, 1)")
    if num_classes < 2:
        raise ContractError("at least two classes are required")
    if not 0 <= c < num_classes:
        raise ContractError(f"class {c} outside [0, {num_classes})")
    row = np.full(num_classes, (1.0 - t) / (num_classes - 1))
    row[c] = t
    return row


@dataclass(frozen=True)
class ClassDistributionTable:
    """One distribution per class, mined or threshold fallback."""

    rows: np.ndarray
    """C×C matrix; row c is the distribution of class c."""

    sources: Tuple[RowSource, ...]
    """Where each row came from."""

    epoch: int
    """Epoch whose label distributions were mined, 0 for the initial table."""

    @property
    def num_classes(self) -> int:
        return self.rows.shape[0]

    @property
    def fallback_classes(self) -> List[int]:
        """Classes whose row is a threshold distribution."""
        return [
            c
            for c, source in enumerate(self.sources)
            if source is RowSource.threshold
        ]

    def rows_for(self, labels: np.ndarray) -> np.ndarray:
        """Return the row of each sample's class."""
        return self.rows[check_labels(labels, self.num_classes)]

    def to_csv(
        self, stream: TextIO, class_names: Optional[Sequence[str]] = None
    ) -> None:
        """Write the table as CSV, one row per class.

        The header holds the class names, which default to ``class_0`` and
        so on.
        """
        names = list(class_names or _class_names(self.num_classes))
        if len(names) != self.num_classes:
            msg = f"{len(names)} class names for {self.num_classes} classes"
            raise ContractError(msg)
        writer = csv.writer(stream, lineterminator="\n")
        writer.writerow(names)
        for row in self.rows:
            writer.writerow([repr(float(v)) for v in row])


def _class_names(num_classes: int) -> List[str]:
    return [f"class_{c}" for c in range(num_classes)]


def initial_table(num_classes: int, t: float) -> ClassDistributionTable:
    """Return the table used during the first epoch.

    Every row is a threshold distribution since no label distributions have
    been observed yet.
    """
    rows = np.stack(
        [threshold_distribution(c, t, num_classes) for c in range(num_classes)]
    )
    sources = tuple(RowSource.threshold for _ in range(num_classes))
    return ClassDistributionTable(rows=rows, sources=sources, epoch=0)


class ClassAccumulator:
    """Accumulate label distributions per annotated class over an epoch.

    Parameters
    ----------
    num_classes : `int`
        Number of classes C.
    """

    def __init__(self, num_classes: int) -> None:
        self._num_classes = num_classes
        self._sums = np.zeros((num_classes, num_classes))
        self._counts = np.zeros(num_classes, dtype=np.int64)

    @property
    def counts(self) -> np.ndarray:
        """Number of samples seen per class."""
        return self._counts.copy()

    def add(self, dists: np.ndarray, labels: np.ndarray) -> None:
        """Add label distributions of samples annotated with ``labels``."""
        labels = check_labels(labels, self._num_classes)
        if dists.shape != (labels.size, self._num_classes):
            expected = (labels.size, self._num_classes)
            raise DimensionError("accumulate", dists.shape, expected)
        np.add.at(self._sums, labels, dists.astype(np.float64))
        self._counts += np.bincount(labels, minlength=self._num_classes)

    def mine(self, t: float, epoch: int = 0) -> ClassDistributionTable:
        """Return the class distribution table of everything added so far.

        Row c is the mean label distribution of samples annotated c.  If no
        sample was annotated c, or the mean's own-class entry is below
        ``t``, the row is the threshold distribution of c instead.
        """
        rows = []
        sources = []
        for c in range(self._num_classes):
            count = self._counts[c]
            if count > 0:
                row = self._sums[c] / count
                if row[c] >= t:
                    rows.append(row)
                    sources.append(RowSource.mined)
                    continue
            rows.append(threshold_distribution(c, t, self._num_classes))
            sources.append(RowSource.threshold)
        return ClassDistributionTable(
            rows=np.stack(rows), sources=tuple(sources), epoch=epoch
        )


def extract_label_distributions(
    p_aux: Union[Tensor, np.ndarray]
) -> np.ndarray:
    """Copy auxiliary branch probabilities into detached label distributions.

    Raises
    ------
    adadf.exceptions.ContractError
        A row is not a probability vector.
    """
    data = p_aux.data if isinstance(p_aux, Tensor) else p_aux
    dists = np.array(data, dtype=np.float64, copy=True)
    check_prob_rows(dists, "label distributions")
    return dists


def mine_class_distributions(
    dists: np.ndarray,
    labels: np.ndarray,
    num_classes: int,
    t: float,
    epoch: int = 0,
) -> ClassDistributionTable:
    """Mine the class distribution table from labelled distributions.

    Parameters
    ----------
    dists : `numpy.ndarray`
        n×C label distributions.
    labels : `numpy.ndarray`
        The n annotated classes.
    num_classes : `int`
        Number of classes C.
    t : `float`
        Minimum own-class entry of a mined row, in (0, 1).
    epoch : `int`, optional
        Epoch to record in the table.

    Returns
    -------
    table : `ClassDistributionTable`
        The mined table with threshold fallback rows.
    """
    if not 0.0 < t < 1.0:
        raise ContractError(f"threshold t={t} outside (0, 1)")
    accumulator = ClassAccumulator(num_classes)
    accumulator.add(np.asarray(dists), labels)
    return accumulator.mine(t, epoch)


def average_attention(w_aux: Tensor, w_tar: Tensor) -> Tensor:
    """Average the attention weights of both branches, on the tape.

    Raises
    ------
    adadf.exceptions.ContractError
        The two weight vectors differ in length.
    """
    if w_aux.shape != w_tar.shape:
        msg = f"attention weights of lengths {w_aux.shape} and {w_tar.shape}"
        raise ContractError(msg)
    return mul(add(w_aux, w_tar), 0.5)


def normalize_weights(
    w_avg: Union[Tensor, np.ndarray], w_min: float
) -> np.ndarray:
    """Min-max rescale batch attention weights to [w_min, 1], detached.

    The smallest weight maps to exactly ``w_min`` and the largest to exactly
    1.  A batch whose weights are all equal maps to all ones.
    """
    if not 0.0 <= w_min < 1.0:
        raise ContractError(f"w_min={w_min} outside [0, 1)")
    data = w_avg.data if isinstance(w_avg, Tensor) else w_avg
    w = np.array(data, dtype=np.float64).reshape(-1)
    if w.size == 0:
        raise ContractError("cannot normalize an empty batch")
    low = w.min()
    high = w.max()
    if high == low:
        return np.ones_like(w)
    scaled = w_min + (1.0 - w_min) * (w - low) / (high - low)
    scaled = np.where(w == high, 1.0, np.where(w == low, w_min, scaled))
    return np.clip(scaled, w_min, 1.0)


def fuse(
    d_label: np.ndarray,
    table: ClassDistributionTable,
    labels: np.ndarray,
    w: np.ndarray,
) -> np.ndarray:
    """Mix each sample's class row and label distribution.

    ``d_fused = w * table[label] + (1 - w) * d_label`` for every sample.

    Raises
    ------
    adadf.exceptions.ContractError
        An input row is not a probability vector, a label is not a class,
        a weight is outside [0, 1], or the lengths disagree.
    """
    check_prob_rows(d_label, "label distributions")
    check_prob_rows(table.rows, "class distribution table")
    class_rows = table.rows_for(labels)
    weights = np.asarray(w, dtype=np.float64).reshape(-1)
    n = d_label.shape[0]
    if weights.shape[0] != n or class_rows.shape[0] != n:
        msg = (
            f"fuse: {n} distributions, {class_rows.shape[0]}"
            f" labels and {weights.shape[0]} weights"
        )
        raise ContractError(msg)
    if class_rows.shape != d_label.shape:
        raise DimensionError("fuse", class_rows.shape, d_label.shape)
    if np.any((weights < 0) | (weights > 1)):
        raise ContractError("fusion weights must lie in [0, 1]")
    column = weights[:, np.newaxis]
    fused = column * class_rows + (1.0 - column) * d_label
    check_prob_rows(fused, "fused distributions")
    return fused
