"""Datasets: synthetic ambiguous data, CSV files, label noise and batching.

Every sample carries a single annotated label.  Synthetic samples also carry
the ground-truth label distribution they were generated from, and the
annotation is drawn from that distribution, so strongly mixed samples are
often annotated with the "wrong" class.
"""

from __future__ import annotations

import csv
import dataclasses
import re
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

from adadf.config import DataConfig, DataSource, NoiseSpec, SyntheticConfig
from adadf.constants import (
    COUNT_GUARD,
    CSV_DIST_TOLERANCE,
    STREAM_BATCHES,
    STREAM_DATA,
    STREAM_NOISE,
    STREAM_SPLIT,
    TRAIN_FRACTION,
)
from adadf.exceptions import ConfigError, DatasetParseError
from adadf.util import floor_count, make_generator

if TYPE_CHECKING:
    from pathlib import Path
    from typing import Dict, List, Optional, Set, TextIO, Tuple, Union

__all__ = [
    "Dataset",
    "batches",
    "export_csv",
    "generate_synthetic",
    "inject_noise",
    "load_csv",
    "load_dataset",
    "sample_labels",
]

_FEATURE_RE = re.compile(r"^feature_(\d+)$")
_DIST_RE = re.compile(r"^dist_(\d+)$")


@dataclass(frozen=True)
class Dataset:
    """Features with single-label annotations and a train/test split.

    Treat every array as read-only; operations return new datasets.
    """

    features: np.ndarray
    """n×D feature matrix."""

    labels: np.ndarray
    """The n annotated class ids.  Test labels are the clean labels."""

    train: np.ndarray
    """Boolean mask of the training samples."""

    num_classes: int
    """Number of classes C."""

    true_dists: Optional[np.ndarray] = None
    """n×C ground-truth label distributions, if known."""

    original_labels: Optional[np.ndarray] = None
    """Labels before noise injection, if noise was injected."""

    def __post_init__(self) -> None:
        n = self.features.shape[0]
        if n == 0:
            raise ConfigError("a dataset needs at least one sample")
        if self.labels.shape != (n,) or self.train.shape != (n,):
            raise ConfigError("labels and split must have one entry per row")
        if np.any((self.labels < 0) | (self.labels >= self.num_classes)):
            raise ConfigError("labels must lie in [0, num_classes)")

    @property
    def size(self) -> int:
        return int(self.features.shape[0])

    @property
    def feature_dim(self) -> int:
        return int(self.features.shape[1])

    @property
    def train_indices(self) -> np.ndarray:
        return np.flatnonzero(self.train)

    @property
    def test_indices(self) -> np.ndarray:
        return np.flatnonzero(~self.train)

    def with_labels(self, labels: np.ndarray) -> Dataset:
        """Return a copy with different annotations, keeping the originals.

        The first relabelling stores the current labels as
        ``original_labels``; later ones keep that shadow unchanged.
        """
        original = self.original_labels
        if original is None:
            original = self.labels.copy()
        return dataclasses.replace(
            self, labels=labels, original_labels=original
        )


def sample_labels(
    true_dists: np.ndarray, rng: np.random.Generator
) -> np.ndarray:
    """Draw one label per row from its distribution by inverse CDF.

    Classes with zero probability are never drawn.
    """
    cdf = np.cumsum(true_dists, axis=1)
    cdf /= cdf[:, -1:]
    cdf[:, -1] = 1.0
    u = rng.random(true_dists.shape[0])
    labels = (cdf <= u[:, np.newaxis]).sum(axis=1)
    return labels.astype(np.int64)


def _prototypes(
    num_classes: int, dim: int, rng: np.random.Generator
) -> np.ndarray:
    """Return C unit-norm prototypes with pairwise-distinct directions.

    Prototypes are orthonormal when D ≥ C.
    """
    gaussian = rng.standard_normal((dim, num_classes))
    if dim >= num_classes:
        q, _ = np.linalg.qr(gaussian)
        return q.T.copy()
    rows = gaussian.T
    return rows / np.linalg.norm(rows, axis=1, keepdims=True)


def _split_mask(n: int, seed: int) -> np.ndarray:
    """Seeded 80/20 split keeping both sides nonempty when n ≥ 2."""
    rng = make_generator(seed, STREAM_SPLIT)
    n_train = floor_count(TRAIN_FRACTION, n, COUNT_GUARD)
    if n >= 2:
        n_train = min(max(n_train, 1), n - 1)
    train = np.zeros(n, dtype=bool)
    train[rng.permutation(n)[:n_train]] = True
    return train


def generate_synthetic(
    config: SyntheticConfig, dtype: str = "float64"
) -> Dataset:
    """Generate an ambiguous classification dataset with known truth.

    Each sample of class c mixes prototype c with one random other
    prototype by a coefficient λ drawn uniformly from [0, ambiguity], then
    adds isotropic Gaussian jitter.  Its true distribution puts 1 − λ on c
    and λ on the other class.  Training labels are drawn from the true
    distribution; test labels are its argmax.

    Raises
    ------
    adadf.exceptions.ConfigError
        Fewer than two classes or feature dimensions, or an ambiguity
        outside [0, 1].
    """
    c_count = config.num_classes
    if c_count < 2 or config.feature_dim < 2:
        raise ConfigError("synthetic data needs C ≥ 2 and D ≥ 2")
    if not 0.0 <= config.ambiguity <= 1.0:
        raise ConfigError(f"ambiguity {config.ambiguity} outside [0, 1]")
    if config.n_per_class < 1:
        raise ConfigError("n_per_class must be positive")

    rng = make_generator(config.seed, STREAM_DATA)
    prototypes = _prototypes(c_count, config.feature_dim, rng)
    n = c_count * config.n_per_class
    own = np.repeat(np.arange(c_count), config.n_per_class)
    other = (own + rng.integers(1, c_count, size=n)) % c_count
    lam = rng.uniform(0.0, config.ambiguity, size=n)
    noise = rng.normal(0.0, config.jitter, size=(n, config.feature_dim))

    features = (
        (1.0 - lam)[:, np.newaxis] * prototypes[own]
        + lam[:, np.newaxis] * prototypes[other]
        + noise
    )
    true_dists = np.zeros((n, c_count))
    rows = np.arange(n)
    true_dists[rows, own] = 1.0 - lam
    true_dists[rows, other] += lam
    annotated = sample_labels(true_dists, rng)

    train = _split_mask(n, config.seed)
    labels = np.where(train, annotated, np.argmax(true_dists, axis=1))
    return Dataset(
        features=features.astype(dtype),
        labels=labels.astype(np.int64),
        train=train,
        num_classes=c_count,
        true_dists=true_dists,
    )


def inject_noise(ds: Dataset, spec: NoiseSpec) -> Dataset:
    """Flip ``floor(rate * n_train)`` training labels to other classes.

    The samples are chosen uniformly without replacement and each gets a
    uniformly random different class.  Test labels are never touched.  A
    rate of zero returns the dataset unchanged.

    Raises
    ------
    adadf.exceptions.ConfigError
        The rate is outside [0, 1].
    """
    if not 0.0 <= spec.rate <= 1.0:
        raise ConfigError(f"noise rate {spec.rate} outside [0, 1]")
    train_indices = ds.train_indices
    count = floor_count(spec.rate, train_indices.size, COUNT_GUARD)
    if count == 0:
        return ds
    rng = make_generator(spec.seed, STREAM_NOISE)
    chosen = rng.choice(train_indices, size=count, replace=False)
    shift = rng.integers(1, ds.num_classes, size=count)
    labels = ds.labels.copy()
    labels[chosen] = (labels[chosen] + shift) % ds.num_classes
    return ds.with_labels(labels)


def _parse_float(value: str, line: int, column: str) -> float:
    try:
        result = float(value)
    except ValueError:
        raise DatasetParseError(f"non-numeric value {value!r}", line, column)
    if not np.isfinite(result):
        raise DatasetParseError(f"non-finite value {value!r}", line, column)
    return result


def _numbered_columns(
    header: List[str], pattern: re.Pattern, what: str
) -> List[int]:
    """Return the header positions of ``<what>_0..<what>_{k-1}`` in order."""
    found: Dict[int, int] = {}
    for position, name in enumerate(header):
        match = pattern.match(name)
        if match:
            found[int(match.group(1))] = position
    expected = list(range(len(found)))
    if sorted(found) != expected:
        missing = min(set(range(max(found) + 1)) - set(found))
        raise DatasetParseError(f"missing column {what}_{missing}", 1)
    return [found[i] for i in expected]


def load_csv(
    path: Union[str, Path],
    num_classes: Optional[int] = None,
    seed: int = 0,
    dtype: str = "float64",
) -> Dataset:
    """Load a dataset from CSV.

    The header names ``feature_0`` through ``feature_{D-1}`` and ``label``,
    optionally ``dist_0`` through ``dist_{C-1}`` holding ground-truth
    distributions, ``split`` (``train`` or ``test``) and
    ``original_label``.  Distribution rows must sum to 1 within 1e-4 and
    are renormalized.  Without a ``split`` column the seeded 80/20 split is
    used.

    Parameters
    ----------
    path : `str` or `pathlib.Path`
        The file to read.
    num_classes : `int`, optional
        Number of classes.  Defaults to the number of distribution columns,
        or else one more than the largest label (at least 2).
    seed : `int`, optional
        Seed of the split when the file has no ``split`` column.
    dtype : `str`, optional
        numpy dtype of the features.

    Raises
    ------
    adadf.exceptions.DatasetParseError
        A column is missing or unknown, a cell is not a number, a label is
        out of range, or a distribution is invalid.
    """
    with open(path, "r", newline="") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise DatasetParseError("missing header", 1)
        rows = [(reader.line_num, row) for row in reader if row]
    return _parse_rows(header, rows, num_classes, seed, dtype)


def _parse_rows(
    header: List[str],
    rows: List[Tuple[int, List[str]]],
    num_classes: Optional[int],
    seed: int,
    dtype: str,
) -> Dataset:
    header = [name.strip() for name in header]
    known = {"label", "split", "original_label"}
    seen: Set[str] = set()
    for name in header:
        if name in seen:
            raise DatasetParseError(f"duplicate column {name}", 1, name)
        seen.add(name)
        if name not in known and not (
            _FEATURE_RE.match(name) or _DIST_RE.match(name)
        ):
            raise DatasetParseError(f"unknown column {name}", 1, name)
    if "label" not in header:
        raise DatasetParseError("missing column label", 1)
    feature_columns = _numbered_columns(header, _FEATURE_RE, "feature")
    if not feature_columns:
        raise DatasetParseError("missing column feature_0", 1)
    dist_columns = (
        _numbered_columns(header, _DIST_RE, "dist")
        if any(_DIST_RE.match(name) for name in header)
        else []
    )
    if not rows:
        raise DatasetParseError("no samples", 1)
    if num_classes is None:
        num_classes = len(dist_columns) if dist_columns else None
    if dist_columns and num_classes != len(dist_columns):
        msg = f"{len(dist_columns)} dist columns for {num_classes} classes"
        raise DatasetParseError(msg, 1)
    label_column = header.index("label")
    split_column = header.index("split") if "split" in header else None
    original_column = (
        header.index("original_label") if "original_label" in header else None
    )

    features = []
    labels = []
    originals = []
    dists = []
    splits = []
    for line, row in rows:
        if len(row) != len(header):
            msg = f"expected {len(header)} cells, found {len(row)}"
            raise DatasetParseError(msg, line)
        features.append(
            [_parse_float(row[i], line, header[i]) for i in feature_columns]
        )
        labels.append(_parse_label(row[label_column], line, "label"))
        if original_column is not None:
            originals.append(
                _parse_label(row[original_column], line, "original_label")
            )
        if dist_columns:
            dist = [
                _parse_float(row[i], line, header[i]) for i in dist_columns
            ]
            dists.append(_check_dist(dist, line))
        if split_column is not None:
            value = row[split_column].strip()
            if value not in ("train", "test"):
                msg = f"split must be train or test, not {value!r}"
                raise DatasetParseError(msg, line, "split")
            splits.append(value == "train")

    if num_classes is None:
        num_classes = max(2, max(labels + originals) + 1)
    checked = ((labels, "label"), (originals, "original_label"))
    for parsed, column in checked:
        for (line, _), label in zip(rows, parsed):
            if label >= num_classes:
                raise DatasetParseError("label out of range", line, column)

    if split_column is not None:
        train = np.array(splits, dtype=bool)
    else:
        train = _split_mask(len(rows), seed)
    return Dataset(
        features=np.array(features, dtype=dtype),
        labels=np.array(labels, dtype=np.int64),
        train=train,
        num_classes=num_classes,
        true_dists=np.array(dists) if dist_columns else None,
        original_labels=(
            np.array(originals, dtype=np.int64) if originals else None
        ),
    )


def _parse_label(value: str, line: int, column: str) -> int:
    number = _parse_float(value, line, column)
    if not number.is_integer():
        raise DatasetParseError(f"non-integer label {value!r}", line, column)
    if number < 0:
        raise DatasetParseError("label out of range", line, column)
    return int(number)


def _check_dist(dist: List[float], line: int) -> List[float]:
    if any(v < 0 for v in dist):
        raise DatasetParseError("negative distribution entry", line)
    total = sum(dist)
    if abs(total - 1.0) > CSV_DIST_TOLERANCE:
        raise DatasetParseError(f"distribution sums to {total!r}", line)
    return [v / total for v in dist]


def export_csv(ds: Dataset, stream: TextIO) -> None:
    """Write a dataset in the schema read by `load_csv`.

    The ``split`` column is always written, and ``original_label`` when the
    labels were corrupted.
    """
    header = [f"feature_{i}" for i in range(ds.feature_dim)] + ["label"]
    if ds.true_dists is not None:
        header += [f"dist_{c}" for c in range(ds.num_classes)]
    header.append("split")
    if ds.original_labels is not None:
        header.append("original_label")

    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(header)
    for i in range(ds.size):
        row = [repr(float(v)) for v in ds.features[i]]
        row.append(str(int(ds.labels[i])))
        if ds.true_dists is not None:
            row.extend(repr(float(v)) for v in ds.true_dists[i])
        row.append("train" if ds.train[i] else "test")
        if ds.original_labels is not None:
            row.append(str(int(ds.original_labels[i])))
        writer.writerow(row)


def load_dataset(config: DataConfig) -> Dataset:
    """Build the dataset described by a configuration, noise included."""
    if config.source is DataSource.csv:
        if not config.path:
            raise ConfigError("dataset_path is required for csv datasets")
        ds = load_csv(
            config.path,
            num_classes=config.synthetic.num_classes,
            seed=config.synthetic.seed,
            dtype=config.dtype,
        )
        if ds.feature_dim != config.synthetic.feature_dim:
            msg = (
                f"{config.path} has {ds.feature_dim} features, input_dim is"
                f" {config.synthetic.feature_dim}"
            )
            raise ConfigError(msg)
    else:
        ds = generate_synthetic(config.synthetic, dtype=config.dtype)
    return inject_noise(ds, config.noise)


def batches(
    ds: Dataset, batch_size: int, seed: int, epoch: int = 0
) -> List[np.ndarray]:
    """Shuffle the training split and cut it into batches.

    A final short batch of one sample is merged into the previous batch so
    that every batch has at least two samples.

    Parameters
    ----------
    ds : `Dataset`
        The dataset whose training samples are batched.
    batch_size : `int`
        Samples per batch, at least 2.
    seed : `int`
        Seed of the shuffle.
    epoch : `int`, optional
        Epoch number, giving each epoch its own order.

    Returns
    -------
    batches : List[`numpy.ndarray`]
        Dataset row indices of each batch.

    Raises
    ------
    adadf.exceptions.ConfigError
        The batch size is below 2 or there are fewer than two training
        samples.
    """
    if batch_size < 2:
        raise ConfigError(f"batch_size must be at least 2, got {batch_size}")
    indices = ds.train_indices
    if indices.size < 2:
        raise ConfigError("at least two training samples are required")
    rng = make_generator(seed, STREAM_BATCHES, epoch)
    order = indices[rng.permutation(indices.size)]
    result = [
        order[start : start + batch_size]
        for start in range(0, order.size, batch_size)
    ]
    if len(result) > 1 and result[-1].size == 1:
        last = result.pop()
        result[-1] = np.concatenate([result[-1], last])
    return result
