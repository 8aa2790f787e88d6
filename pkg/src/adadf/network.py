"""The dual-branch model.

A shared dense feature extractor feeds two structurally identical branches.
Each branch has an attention head (one dense unit followed by a sigmoid)
whose per-sample weight scales the branch features before the branch
classifier.  The auxiliary branch supplies label distributions during
training and is ignored by `inference`.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np
from pydantic import ValidationError

from adadf.autodiff import (
    Tensor,
    add,
    detach,
    matmul,
    no_grad,
    relu,
    reshape,
    sigmoid,
    softmax_rows,
)
from adadf.config import ModelConfig
from adadf.constants import CHECKPOINT_VERSION, STREAM_MODEL
from adadf.exceptions import (
    CheckpointError,
    ConfigError,
    ContractError,
    DimensionError,
)
from adadf.models.checkpoint import CheckpointModel, ParameterRecord
from adadf.util import make_generator

if TYPE_CHECKING:
    from pathlib import Path
    from typing import Any, Dict, Iterator, List, Optional, Tuple, Union

    BatchLike = Union[Tensor, np.ndarray]

__all__ = [
    "Dense",
    "DenseStack",
    "DualBranchModel",
    "ForwardOutputs",
    "forward",
    "forward_target",
    "inference",
    "init_model",
    "load_checkpoint",
    "save_checkpoint",
]


@dataclass
class Dense:
    """A fully connected layer computing ``x @ weight + bias``."""

    weight: Tensor
    """Weights of shape in×out."""

    bias: Tensor
    """Bias of shape 1×out, broadcast over the rows of the input."""

    @classmethod
    def initialize(
        cls,
        fan_in: int,
        fan_out: int,
        rng: np.random.Generator,
        dtype: str,
    ) -> Dense:
        """Draw weights and bias uniformly from ``±1/sqrt(fan_in)``."""
        bound = 1.0 / math.sqrt(fan_in)
        weight = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        bias = rng.uniform(-bound, bound, size=(1, fan_out))
        return cls(
            weight=Tensor(weight, requires_grad=True, dtype=dtype),
            bias=Tensor(bias, requires_grad=True, dtype=dtype),
        )

    def __call__(self, x: Tensor) -> Tensor:
        return add(matmul(x, self.weight), self.bias)

    def named_parameters(self, prefix: str) -> Iterator[Tuple[str, Tensor]]:
        yield f"{prefix}.weight", self.weight
        yield f"{prefix}.bias", self.bias


@dataclass
class DenseStack:
    """Dense layers, each followed by a ReLU."""

    layers: List[Dense]

    @classmethod
    def initialize(
        cls,
        input_dim: int,
        dims: Tuple[int, ...],
        rng: np.random.Generator,
        dtype: str,
    ) -> DenseStack:
        layers = []
        fan_in = input_dim
        for width in dims:
            layers.append(Dense.initialize(fan_in, width, rng, dtype))
            fan_in = width
        return cls(layers=layers)

    def __call__(self, x: Tensor) -> Tensor:
        for layer in self.layers:
            x = relu(layer(x))
        return x

    @property
    def output_dim(self) -> int:
        return self.layers[-1].weight.shape[1]

    def named_parameters(self, prefix: str) -> Iterator[Tuple[str, Tensor]]:
        for i, layer in enumerate(self.layers):
            yield from layer.named_parameters(f"{prefix}.{i}")


@dataclass
class ForwardOutputs:
    """Outputs of one forward pass through both branches."""

    p_aux: Tensor
    """Auxiliary branch class probabilities, n×C."""

    p_tar: Tensor
    """Target branch class probabilities, n×C."""

    w_aux: Tensor
    """Auxiliary attention weights, n values in (0, 1)."""

    w_tar: Tensor
    """Target attention weights, n values in (0, 1)."""

    rank_aux: Tensor
    """Auxiliary weights fed to the rank regularization.

    The same tensor as ``w_aux`` unless the model stops the rank
    regularization gradient at the branch features.
    """

    rank_tar: Tensor
    """Target weights fed to the rank regularization."""


@dataclass
class DualBranchModel:
    """The extractor, both branches, their attention heads and classifiers.

    Parameters are leaves of the autodiff graph and persist across tapes.
    """

    config: ModelConfig
    extractor: DenseStack
    aux_branch: DenseStack
    tar_branch: DenseStack
    aux_attention: Dense
    tar_attention: Dense
    aux_classifier: Dense
    tar_classifier: Dense

    def named_parameters(self) -> List[Tuple[str, Tensor]]:
        """Return every parameter with its name, in a fixed order."""
        params: List[Tuple[str, Tensor]] = []
        params.extend(self.extractor.named_parameters("extractor"))
        params.extend(self.aux_branch.named_parameters("aux_branch"))
        params.extend(self.tar_branch.named_parameters("tar_branch"))
        params.extend(self.aux_attention.named_parameters("aux_attention"))
        params.extend(self.tar_attention.named_parameters("tar_attention"))
        params.extend(self.aux_classifier.named_parameters("aux_classifier"))
        params.extend(self.tar_classifier.named_parameters("tar_classifier"))
        return params

    def parameters(self) -> List[Tuple[str, Tensor]]:
        """Return the named parameters the optimizer updates.

        A frozen extractor is left out.  Without attention (the single-label
        baseline) only the extractor, target branch and target classifier
        take part in training.
        """
        trainable = []
        for name, tensor in self.named_parameters():
            module = name.split(".", 1)[0]
            if module == "extractor" and self.config.freeze_extractor:
                continue
            if not self.config.use_attention and module not in (
                "extractor",
                "tar_branch",
                "tar_classifier",
            ):
                continue
            trainable.append((name, tensor))
        return trainable

    def auxiliary_parameters(self) -> List[Tuple[str, Tensor]]:
        """Return the auxiliary branch, head and classifier parameters."""
        return [
            (name, tensor)
            for name, tensor in self.named_parameters()
            if name.startswith("aux_")
        ]

    def zero_grad(self) -> None:
        for _, tensor in self.named_parameters():
            tensor.zero_grad()

    def copy(self) -> DualBranchModel:
        """Return an independent copy with the same parameter values."""
        return _model_from_arrays(
            self.config,
            {name: t.data for name, t in self.named_parameters()},
        )


def init_model(config: ModelConfig) -> DualBranchModel:
    """Initialize a model with seeded fan-in scaled uniform weights.

    Layers are drawn in a fixed order from one generator, so both branches
    have identical shapes but independent values, and a given seed always
    produces bitwise-identical parameters.

    Parameters
    ----------
    config : `adadf.config.ModelConfig`
        The model configuration.

    Returns
    -------
    model : `DualBranchModel`
        The initialized model.

    Raises
    ------
    adadf.exceptions.ConfigError
        A layer list is empty or a dimension is not positive.
    """
    if not config.extractor_dims or not config.branch_dims:
        raise ConfigError("extractor_dims and branch_dims must not be empty")
    dims = (config.input_dim, *config.extractor_dims, *config.branch_dims)
    if any(d < 1 for d in dims):
        raise ConfigError(f"layer widths must be positive, got {dims}")
    if config.num_classes < 2:
        raise ConfigError("at least two classes are required")

    rng = make_generator(config.seed, STREAM_MODEL)
    dtype = config.dtype
    extractor = DenseStack.initialize(
        config.input_dim, config.extractor_dims, rng, dtype
    )
    feature_dim = extractor.output_dim
    aux_branch = DenseStack.initialize(
        feature_dim, config.branch_dims, rng, dtype
    )
    tar_branch = DenseStack.initialize(
        feature_dim, config.branch_dims, rng, dtype
    )
    hidden = tar_branch.output_dim
    aux_attention = Dense.initialize(hidden, 1, rng, dtype)
    tar_attention = Dense.initialize(hidden, 1, rng, dtype)
    aux_classifier = Dense.initialize(hidden, config.num_classes, rng, dtype)
    tar_classifier = Dense.initialize(hidden, config.num_classes, rng, dtype)

    if config.freeze_extractor:
        for _, tensor in extractor.named_parameters("extractor"):
            tensor.requires_grad = False

    return DualBranchModel(
        config=config,
        extractor=extractor,
        aux_branch=aux_branch,
        tar_branch=tar_branch,
        aux_attention=aux_attention,
        tar_attention=tar_attention,
        aux_classifier=aux_classifier,
        tar_classifier=tar_classifier,
    )


def _as_batch(model: DualBranchModel, batch: BatchLike) -> Tensor:
    x = batch if isinstance(batch, Tensor) else Tensor(batch)
    if x.dtype != np.dtype(model.config.dtype):
        x = Tensor(x.data, dtype=model.config.dtype)
    expected = (x.shape[0] if x.data.ndim else 0, model.config.input_dim)
    if x.data.ndim != 2 or x.shape[1] != model.config.input_dim:
        raise DimensionError("forward", x.shape, expected)
    if x.shape[0] == 0:
        raise ContractError("forward needs a nonempty batch")
    return x


def _attention(head: Dense, h: Tensor) -> Tensor:
    """Per-sample attention weights as an n×1 column."""
    return sigmoid(head(h))


def forward(model: DualBranchModel, batch: BatchLike) -> ForwardOutputs:
    """Run both branches on a batch.

    Every output is recorded on the active tape, so gradients flow through
    the attention scaling into the heads, branches and extractor.

    Parameters
    ----------
    model : `DualBranchModel`
        The model.
    batch : `adadf.autodiff.Tensor` or `numpy.ndarray`
        Features of shape n×input_dim with n ≥ 1.

    Returns
    -------
    outputs : `ForwardOutputs`
        Probabilities and attention weights of both branches.

    Raises
    ------
    adadf.exceptions.DimensionError
        The feature width does not match the model.
    """
    x = _as_batch(model, batch)
    n = x.shape[0]
    features = model.extractor(x)

    h_aux = model.aux_branch(features)
    w_aux = _attention(model.aux_attention, h_aux)
    p_aux = softmax_rows(model.aux_classifier(h_aux * w_aux))

    h_tar = model.tar_branch(features)
    w_tar = _attention(model.tar_attention, h_tar)
    p_tar = softmax_rows(model.tar_classifier(h_tar * w_tar))

    w_aux_vec = reshape(w_aux, (n,))
    w_tar_vec = reshape(w_tar, (n,))
    if model.config.detach_rank_features:
        rank_aux = _attention(model.aux_attention, detach(h_aux))
        rank_tar = _attention(model.tar_attention, detach(h_tar))
        rank_aux = reshape(rank_aux, (n,))
        rank_tar = reshape(rank_tar, (n,))
    else:
        rank_aux = w_aux_vec
        rank_tar = w_tar_vec

    return ForwardOutputs(
        p_aux=p_aux,
        p_tar=p_tar,
        w_aux=w_aux_vec,
        w_tar=w_tar_vec,
        rank_aux=rank_aux,
        rank_tar=rank_tar,
    )


def forward_target(model: DualBranchModel, batch: BatchLike) -> Tensor:
    """Run the extractor and target branch only, returning p_tar.

    Models without attention (the single-label baseline) feed the branch
    features to the classifier unscaled.
    """
    x = _as_batch(model, batch)
    h_tar = model.tar_branch(model.extractor(x))
    if model.config.use_attention:
        h_tar = h_tar * _attention(model.tar_attention, h_tar)
    return softmax_rows(model.tar_classifier(h_tar))


def inference(model: DualBranchModel, batch: BatchLike) -> np.ndarray:
    """Predict class labels with the target branch.

    Nothing is recorded on any tape.  Exact ties go to the lowest class
    index.

    Returns
    -------
    labels : `numpy.ndarray`
        One int64 class id per row of the batch.
    """
    with no_grad():
        p_tar = forward_target(model, batch)
    return np.argmax(p_tar.data, axis=1).astype(np.int64)


def _model_from_arrays(
    config: ModelConfig, arrays: Dict[str, np.ndarray]
) -> DualBranchModel:
    model = init_model(config)
    for name, tensor in model.named_parameters():
        if name not in arrays:
            raise CheckpointError(f"Checkpoint is missing parameter {name}")
        array = np.asarray(arrays[name], dtype=config.dtype)
        if array.shape != tensor.shape:
            msg = (
                f"Parameter {name} has shape {array.shape}, model expects"
                f" {tensor.shape}"
            )
            raise CheckpointError(msg)
        tensor.data = array.copy()
    extra = set(arrays) - {name for name, _ in model.named_parameters()}
    if extra:
        raise CheckpointError(f"Unknown parameters {sorted(extra)}")
    return model


def save_checkpoint(
    model: DualBranchModel,
    path: Union[str, Path],
    settings: Optional[Dict[str, Any]] = None,
) -> None:
    """Write the configuration and parameters of a model as JSON.

    Parameters
    ----------
    model : `DualBranchModel`
        The model to save.
    path : `str` or `pathlib.Path`
        Destination file.
    settings : Dict[`str`, Any], optional
        Effective run settings to embed in the checkpoint.
    """
    config = dataclasses.asdict(model.config)
    checkpoint = CheckpointModel(
        version=CHECKPOINT_VERSION,
        model=config,
        settings=settings or {},
        parameters=[
            ParameterRecord(
                name=name,
                shape=list(tensor.shape),
                data=[float(v) for v in tensor.data.ravel()],
            )
            for name, tensor in model.named_parameters()
        ],
    )
    with open(path, "w", newline="\n") as f:
        f.write(checkpoint.json())
        f.write("\n")


def load_checkpoint(
    path: Union[str, Path]
) -> Tuple[DualBranchModel, Dict[str, Any]]:
    """Load a model written by `save_checkpoint`.

    Returns
    -------
    model : `DualBranchModel`
        The model with its saved parameters.
    settings : Dict[`str`, Any]
        The run settings embedded in the checkpoint, possibly empty.

    Raises
    ------
    adadf.exceptions.CheckpointError
        The file cannot be read, has an unsupported version, or its
        parameters do not match its model configuration.
    """
    try:
        checkpoint = CheckpointModel.parse_file(path)
    except (OSError, ValidationError, ValueError) as e:
        raise CheckpointError(f"Cannot read checkpoint {path}: {e}")
    if checkpoint.version != CHECKPOINT_VERSION:
        msg = f"Unsupported checkpoint version {checkpoint.version}"
        raise CheckpointError(msg)
    try:
        fields = dict(checkpoint.model)
        fields["extractor_dims"] = tuple(fields["extractor_dims"])
        fields["branch_dims"] = tuple(fields["branch_dims"])
        config = ModelConfig(**fields)
    except (KeyError, TypeError) as e:
        raise CheckpointError(f"Invalid model configuration in {path}: {e}")
    arrays = {
        p.name: np.array(p.data, dtype=np.float64).reshape(p.shape)
        for p in checkpoint.parameters
    }
    try:
        model = _model_from_arrays(config, arrays)
    except ConfigError as e:
        raise CheckpointError(f"Invalid model configuration in {path}: {e}")
    return model, checkpoint.settings
