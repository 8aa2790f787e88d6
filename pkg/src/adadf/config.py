"""Configuration for adadf.

There are two, mostly-parallel models defined here.  `Settings` is the
pydantic model used to read the run settings file from disk.  It is then
processed and broken up into frozen configuration dataclasses for the
components (`ModelConfig`, `SyntheticConfig`, `NoiseSpec`, `DataConfig`) and
exposed to the rest of adadf as the `RunConfig` object.
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Tuple

import yaml
from pydantic import BaseSettings, Extra, root_validator, validator
from safir.logging import configure_logging

from adadf.constants import CONFIG_DIR_ENV, LOGGER_NAME
from adadf.exceptions import ConfigError

__all__ = [
    "DataConfig",
    "DataSource",
    "ModelConfig",
    "NoiseSpec",
    "Precision",
    "RunConfig",
    "Settings",
    "SyntheticConfig",
    "TargetMode",
    "resolve_config_path",
]


class DataSource(Enum):
    """Where the training data comes from."""

    synthetic = "synthetic"
    csv = "csv"


class TargetMode(Enum):
    """What supervises the target branch.

    fused
        Adaptive fusion of class and label distributions (the full method).
    label
        The label distributions extracted by the auxiliary branch.
    class
        The mined class distribution of the sample's annotated class.
    single
        Single-label baseline: plain cross-entropy on the target branch with
        no auxiliary branch, attention heads or fusion.
    """

    fused = "fused"
    label = "label"
    class_ = "class"
    single = "single"


class Precision(Enum):
    """Floating point precision of the engine."""

    double = "double"
    single = "single"

    @property
    def dtype(self) -> str:
        """The numpy dtype name for this precision."""
        return "float64" if self is Precision.double else "float32"


class Settings(BaseSettings):
    """pydantic model of the adadf run settings file.

    This describes the settings file as parsed from disk.  This model will be
    converted to a `RunConfig` dataclass for internal use.  Every key may
    also be set through an ``ADADF_``-prefixed environment variable, which
    supplies values missing from the file.
    """

    loglevel: str = "INFO"
    """Logging level."""

    profile: str = "production"
    """Logging profile: ``production`` (JSON) or ``development``."""

    num_classes: int = 5
    """Number of classes C."""

    input_dim: int = 32
    """Width of the input feature vectors."""

    extractor_dims: List[int] = [64]
    """Hidden widths of the shared feature extractor."""

    branch_dims: List[int] = [64, 32]
    """Hidden widths of each of the two branches."""

    freeze_extractor: bool = False
    """Exclude the feature extractor from optimization."""

    detach_rank_features: bool = False
    """Stop the rank regularization gradient at the branch features."""

    precision: Precision = Precision.double
    """Floating point precision."""

    dataset: DataSource = DataSource.synthetic
    """Where the data comes from."""

    dataset_path: Optional[str] = None
    """Path of the CSV file when ``dataset`` is ``csv``."""

    n_per_class: int = 500
    """Synthetic samples generated per class."""

    ambiguity: float = 0.6
    """Upper bound of the synthetic mixing coefficient."""

    jitter: float = 0.05
    """Standard deviation of the synthetic isotropic feature jitter."""

    data_seed: Optional[int] = None
    """Seed of the dataset, split and noise.  Defaults to ``seed``."""

    noise_rate: float = 0.0
    """Fraction of training labels replaced by a different class."""

    target: TargetMode = TargetMode.fused
    """What supervises the target branch."""

    batch_size: int = 64
    """Samples per optimizer step."""

    epochs: int = 40
    """Number of training epochs."""

    lr0: float = 0.001
    """Initial learning rate."""

    gamma: float = 0.9
    """Learning rate decay factor applied after each epoch."""

    w_min: float = 0.2
    """Lower limit of the normalized attention weights."""

    t: float = 0.7
    """Threshold on the own-class description degree of mined rows."""

    beta: int = 3
    """Epoch threshold of the ramp functions."""

    delta: float = 0.07
    """Margin of the rank regularization."""

    ratio: float = 0.7
    """Fraction of a batch placed in the high attention group."""

    seed: int = 0
    """Seed of the model initialization and batch order."""

    trace_samples: List[int] = [0, 1, 2, 3, 4]
    """Training-split indices whose fusion is traced every epoch."""

    class Config:
        env_prefix = "ADADF_"
        extra = Extra.forbid

    @validator("loglevel")
    def _valid_loglevel(cls, v: str) -> str:
        level = getattr(logging, v, None)
        if not isinstance(level, int):
            raise ValueError("invalid logging level")
        return v

    @validator("profile")
    def _valid_profile(cls, v: str) -> str:
        if v not in ("production", "development"):
            raise ValueError("profile must be production or development")
        return v

    @validator("num_classes")
    def _valid_num_classes(cls, v: int) -> int:
        if v < 2:
            raise ValueError("at least two classes are required")
        return v

    @validator("input_dim", "n_per_class")
    def _positive(cls, v: int) -> int:
        if v < 1:
            raise ValueError("must be positive")
        return v

    @validator("extractor_dims", "branch_dims")
    def _valid_dims(cls, v: List[int]) -> List[int]:
        if not v:
            raise ValueError("at least one layer is required")
        if any(d < 1 for d in v):
            raise ValueError("layer widths must be positive")
        return v

    @validator("ambiguity", "noise_rate")
    def _unit_interval(cls, v: float) -> float:
        if not 0.0 <= v <= 1.0:
            raise ValueError("must lie in [0, 1]")
        return v

    @validator("jitter", "delta")
    def _nonnegative(cls, v: float) -> float:
        if v < 0:
            raise ValueError("must not be negative")
        return v

    @validator("data_seed", "seed")
    def _valid_seed(cls, v: Optional[int]) -> Optional[int]:
        if v is not None and v < 0:
            raise ValueError("seeds are unsigned")
        return v

    @validator("batch_size")
    def _valid_batch_size(cls, v: int) -> int:
        if v < 2:
            raise ValueError("batch_size must be at least 2")
        return v

    @validator("epochs")
    def _valid_epochs(cls, v: int) -> int:
        if v < 0:
            raise ValueError("epochs must not be negative")
        return v

    @validator("lr0")
    def _valid_lr0(cls, v: float) -> float:
        if v <= 0:
            raise ValueError("lr0 must be positive")
        return v

    @validator("gamma")
    def _valid_gamma(cls, v: float) -> float:
        if not 0.0 < v <= 1.0:
            raise ValueError("gamma must lie in (0, 1]")
        return v

    @validator("w_min")
    def _valid_w_min(cls, v: float) -> float:
        if not 0.0 <= v < 1.0:
            raise ValueError("w_min must lie in [0, 1)")
        return v

    @validator("t", "ratio")
    def _open_unit_interval(cls, v: float) -> float:
        if not 0.0 < v < 1.0:
            raise ValueError("must lie in (0, 1)")
        return v

    @validator("beta")
    def _valid_beta(cls, v: int) -> int:
        if v < 1:
            raise ValueError("beta must be at least 1")
        return v

    @validator("trace_samples", each_item=True)
    def _valid_trace_sample(cls, v: int) -> int:
        if v < 0:
            raise ValueError("sample indices must not be negative")
        return v

    @root_validator(skip_on_failure=True)
    def _csv_needs_path(cls, values: Dict[str, Any]) -> Dict[str, Any]:
        if values["dataset"] is DataSource.csv and not values["dataset_path"]:
            raise ValueError("dataset_path is required for csv datasets")
        return values


@dataclass(frozen=True)
class ModelConfig:
    """Configuration of the dual-branch model."""

    input_dim: int
    """Width of the input feature vectors."""

    extractor_dims: Tuple[int, ...]
    """Hidden widths of the shared feature extractor."""

    branch_dims: Tuple[int, ...]
    """Hidden widths applied identically to both branches."""

    num_classes: int
    """Number of classes C."""

    freeze_extractor: bool = False
    """Exclude the feature extractor from optimization."""

    seed: int = 0
    """Seed of the parameter initialization."""

    detach_rank_features: bool = False
    """Compute the rank regularization weights on detached features."""

    use_attention: bool = True
    """Scale branch features by the attention weights.

    Disabled for the single-label baseline, which also never runs the
    auxiliary branch.
    """

    dtype: str = "float64"
    """numpy dtype of the parameters."""


@dataclass(frozen=True)
class SyntheticConfig:
    """Configuration of the synthetic ambiguous dataset."""

    num_classes: int
    """Number of classes C."""

    feature_dim: int
    """Feature width D."""

    n_per_class: int
    """Samples generated per class."""

    ambiguity: float
    """Upper bound a of the mixing coefficient, in [0, 1]."""

    seed: int
    """Seed of the generator."""

    jitter: float = 0.05
    """Standard deviation of the isotropic feature jitter."""


@dataclass(frozen=True)
class NoiseSpec:
    """Symmetric label noise applied to the training split."""

    rate: float
    """Fraction of training labels to flip, in [0, 1]."""

    seed: int
    """Seed of the sample and replacement choices."""


@dataclass(frozen=True)
class DataConfig:
    """Where the dataset comes from and how it is corrupted."""

    source: DataSource
    """Synthetic generation or a CSV file."""

    path: Optional[str]
    """Path of the CSV file, if any."""

    synthetic: SyntheticConfig
    """Synthetic generation parameters."""

    noise: NoiseSpec
    """Label noise applied after loading."""

    dtype: str = "float64"
    """numpy dtype of the features."""


@dataclass(frozen=True)
class RunConfig:
    """Configuration of one training run.

    The internal representation of the configuration, created from the
    `Settings` model.  The validated settings are kept alongside so that the
    effective configuration can be echoed into artifacts and derived runs
    can be re-validated.
    """

    model: ModelConfig
    """Model configuration."""

    data: DataConfig
    """Dataset configuration."""

    target: TargetMode
    """What supervises the target branch."""

    batch_size: int
    """Samples per optimizer step."""

    epochs: int
    """Number of training epochs."""

    lr0: float
    """Initial learning rate."""

    gamma: float
    """Learning rate decay factor applied after each epoch."""

    w_min: float
    """Lower limit of the normalized attention weights."""

    t: float
    """Threshold on the own-class description degree of mined rows."""

    beta: int
    """Epoch threshold of the ramp functions."""

    delta: float
    """Margin of the rank regularization."""

    ratio: float
    """Fraction of a batch placed in the high attention group."""

    seed: int
    """Seed of the model initialization and batch order."""

    trace_samples: Tuple[int, ...]
    """Training-split indices whose fusion is traced every epoch."""

    settings: Settings
    """The validated settings this configuration was built from."""

    @classmethod
    def from_settings(cls, settings: Settings) -> RunConfig:
        """Construct a RunConfig from validated settings.

        Parameters
        ----------
        settings : `Settings`
            The validated settings.

        Returns
        -------
        config : `RunConfig`
            The corresponding configuration.
        """
        dtype = settings.precision.dtype
        data_seed = settings.seed
        if settings.data_seed is not None:
            data_seed = settings.data_seed
        model = ModelConfig(
            input_dim=settings.input_dim,
            extractor_dims=tuple(settings.extractor_dims),
            branch_dims=tuple(settings.branch_dims),
            num_classes=settings.num_classes,
            freeze_extractor=settings.freeze_extractor,
            seed=settings.seed,
            detach_rank_features=settings.detach_rank_features,
            use_attention=settings.target is not TargetMode.single,
            dtype=dtype,
        )
        data = DataConfig(
            source=settings.dataset,
            path=settings.dataset_path,
            synthetic=SyntheticConfig(
                num_classes=settings.num_classes,
                feature_dim=settings.input_dim,
                n_per_class=settings.n_per_class,
                ambiguity=settings.ambiguity,
                seed=data_seed,
                jitter=settings.jitter,
            ),
            noise=NoiseSpec(rate=settings.noise_rate, seed=data_seed),
            dtype=dtype,
        )
        return cls(
            model=model,
            data=data,
            target=settings.target,
            batch_size=settings.batch_size,
            epochs=settings.epochs,
            lr0=settings.lr0,
            gamma=settings.gamma,
            w_min=settings.w_min,
            t=settings.t,
            beta=settings.beta,
            delta=settings.delta,
            ratio=settings.ratio,
            seed=settings.seed,
            trace_samples=tuple(settings.trace_samples),
            settings=settings,
        )

    @classmethod
    def from_mapping(cls, data: Mapping[str, Any]) -> RunConfig:
        """Validate a settings mapping and construct a RunConfig.

        Raises
        ------
        pydantic.ValidationError
            The mapping is not a valid settings mapping.
        """
        return cls.from_settings(Settings.parse_obj(dict(data)))

    @classmethod
    def from_file(
        cls, path: str, overrides: Optional[Mapping[str, Any]] = None
    ) -> RunConfig:
        """Construct a RunConfig from a settings file and overrides.

        Overrides take precedence over the file, which takes precedence over
        environment variables and then defaults.  Loading the configuration
        also configures logging.

        Parameters
        ----------
        path : `str`
            Path to the settings file in YAML.
        overrides : Mapping[`str`, Any], optional
            Settings given on the command line.

        Returns
        -------
        config : `RunConfig`
            The corresponding RunConfig object.

        Raises
        ------
        pydantic.ValidationError
            The merged settings are invalid.
        adadf.exceptions.ConfigError
            The settings file does not contain a mapping.
        """
        with open(path, "r") as f:
            raw_settings = yaml.safe_load(f) or {}
        if not isinstance(raw_settings, dict):
            raise ConfigError(f"Settings file {path} is not a mapping")
        if overrides:
            raw_settings.update(overrides)
        config = cls.from_mapping(raw_settings)

        # Configure logging.
        configure_logging(
            profile=config.settings.profile,
            log_level=config.settings.loglevel,
            name=LOGGER_NAME,
        )

        return config

    def with_overrides(self, **overrides: Any) -> RunConfig:
        """Return a re-validated copy with some settings replaced."""
        data = self.settings.dict()
        data.update(overrides)
        return self.from_mapping(data)

    def to_dict(self) -> Dict[str, Any]:
        """Return the effective settings as plain JSON-compatible data."""
        return json.loads(self.settings.json())

    def to_yaml(self) -> str:
        """Return the effective settings as a YAML document."""
        return yaml.safe_dump(self.to_dict(), sort_keys=True)


def resolve_config_path(path: str) -> Path:
    """Resolve a config path against ``ADADF_CONFIG_DIR`` if relative.

    Parameters
    ----------
    path : `str`
        The path given on the command line.

    Returns
    -------
    resolved : `pathlib.Path`
        The path to open.  Absolute paths and paths that exist relative to
        the working directory are returned unchanged.
    """
    candidate = Path(path)
    config_dir = os.getenv(CONFIG_DIR_ENV)
    if candidate.is_absolute() or candidate.exists() or not config_dir:
        return candidate
    return Path(config_dir) / candidate
