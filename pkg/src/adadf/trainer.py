"""The training loop.

Each step runs both branches on a batch, trains the auxiliary branch with
cross-entropy, fuses class and label distributions into targets for the
target branch, and takes one Adam step on the joint loss.  Label
distributions seen during epoch e are mined into the class table used in
epoch e + 1; the first epoch uses threshold rows only.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import TYPE_CHECKING

import numpy as np
import structlog

from adadf.autodiff import Tape, backward
from adadf.config import TargetMode
from adadf.constants import ADAM_BETA1, ADAM_BETA2, ADAM_EPSILON, LOGGER_NAME
from adadf.data import batches, load_dataset
from adadf.distributions import (
    ClassAccumulator,
    average_attention,
    extract_label_distributions,
    fuse,
    initial_table,
    mean_l1,
    normalize_weights,
    one_hot,
)
from adadf.exceptions import ConfigError, ContractError
from adadf.losses import (
    LossTerms,
    cross_entropy,
    joint_loss,
    kl_divergence,
    rank_regularization,
)
from adadf.models.metrics import EpochMetrics, RunMetrics, StepRecord
from adadf.models.report import ClassTableRecord, FusionTrace
from adadf.network import forward, forward_target, inference, init_model

if TYPE_CHECKING:
    from typing import Dict, Iterable, List, Optional, Sequence, Tuple

    from structlog.stdlib import BoundLogger

    from adadf.autodiff import Tensor
    from adadf.config import RunConfig
    from adadf.data import Dataset
    from adadf.distributions import ClassDistributionTable
    from adadf.network import DualBranchModel

__all__ = [
    "EpochResult",
    "OptimizerState",
    "RunResult",
    "Trainer",
    "adam_step",
    "decay_lr",
    "evaluate",
    "run",
]


@dataclass
class OptimizerState:
    """Adam moment estimates and the learning rate schedule."""

    lr: float
    """Current learning rate."""

    gamma: float
    """Decay factor applied at the end of each epoch."""

    step: int = 0
    """Number of updates taken."""

    m: Dict[str, np.ndarray] = field(default_factory=dict)
    """First moment estimate per parameter name."""

    v: Dict[str, np.ndarray] = field(default_factory=dict)
    """Second moment estimate per parameter name."""

    @classmethod
    def create(
        cls, parameters: Sequence[Tuple[str, Tensor]], lr0: float, gamma: float
    ) -> OptimizerState:
        """Create zeroed moments shaped like the parameters."""
        return cls(
            lr=lr0,
            gamma=gamma,
            m={name: np.zeros_like(p.data) for name, p in parameters},
            v={name: np.zeros_like(p.data) for name, p in parameters},
        )


def adam_step(
    state: OptimizerState, parameters: Sequence[Tuple[str, Tensor]]
) -> None:
    """Update parameters in place from their gradients.

    Parameters without a gradient are skipped.  Moments of parameters not
    seen before are created on first use.

    Raises
    ------
    adadf.exceptions.ContractError
        A gradient does not have the shape of its parameter.
    """
    state.step += 1
    t = state.step
    correction1 = 1.0 - ADAM_BETA1**t
    correction2 = 1.0 - ADAM_BETA2**t
    for name, param in parameters:
        grad = param.grad
        if grad is None:
            continue
        if grad.shape != param.shape:
            msg = (
                f"gradient of {name} has shape {grad.shape}, parameter has"
                f" {param.shape}"
            )
            raise ContractError(msg)
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None or v is None:
            m = np.zeros_like(param.data)
            v = np.zeros_like(param.data)
        m = ADAM_BETA1 * m + (1.0 - ADAM_BETA1) * grad
        v = ADAM_BETA2 * v + (1.0 - ADAM_BETA2) * grad * grad
        state.m[name] = m
        state.v[name] = v
        update = state.lr * (m / correction1)
        update = update / (np.sqrt(v / correction2) + ADAM_EPSILON)
        param.data = (param.data - update).astype(param.dtype)


def decay_lr(
    state: OptimizerState, gamma: Optional[float] = None
) -> OptimizerState:
    """Multiply the learning rate by ``gamma`` (the state's by default)."""
    state.lr *= state.gamma if gamma is None else gamma
    return state


def evaluate(
    model: DualBranchModel, ds: Dataset, split: str = "test"
) -> float:
    """Accuracy of target branch predictions on one split.

    Raises
    ------
    adadf.exceptions.ContractError
        The split has no samples or is not ``train`` or ``test``.
    """
    if split == "train":
        indices = ds.train_indices
    elif split == "test":
        indices = ds.test_indices
    else:
        raise ContractError(f"unknown split {split}")
    if indices.size == 0:
        raise ContractError(f"the {split} split is empty")
    predictions = inference(model, ds.features[indices])
    return float(np.mean(predictions == ds.labels[indices]))


@dataclass
class EpochResult:
    """What one epoch of training produced."""

    steps: List[StepRecord]
    """Loss terms of every step."""

    next_table: ClassDistributionTable
    """Table mined from this epoch, used during the next one."""

    traces: List[FusionTrace]
    """Fusion of the traced samples."""

    label_dists: Optional[np.ndarray] = None
    """Label distribution of every dataset row trained on, NaN elsewhere."""

    fused_dists: Optional[np.ndarray] = None
    """Fused target of every dataset row trained on, NaN elsewhere."""

    degenerate_batches: int = 0
    """Batches whose attention weights were all equal."""


@dataclass
class RunResult:
    """Everything a run produced."""

    metrics: RunMetrics
    model: DualBranchModel
    steps: List[StepRecord]
    tables: List[ClassTableRecord]
    traces: List[FusionTrace]


class Trainer:
    """Train a dual-branch model as described by a run configuration.

    Parameters
    ----------
    config : `adadf.config.RunConfig`
        The run configuration.
    logger : `structlog.stdlib.BoundLogger`, optional
        Logger to use.  Defaults to the adadf logger.
    """

    def __init__(
        self, config: RunConfig, logger: Optional[BoundLogger] = None
    ) -> None:
        self._config = config
        if logger is None:
            logger = structlog.get_logger(LOGGER_NAME)
        self._logger = logger.bind(seed=config.seed)

    def train_epoch(
        self,
        model: DualBranchModel,
        ds: Dataset,
        table: ClassDistributionTable,
        optimizer: OptimizerState,
        e: int,
        traced: Optional[Dict[int, int]] = None,
    ) -> EpochResult:
        """Train for one epoch and mine the next class table.

        Parameters
        ----------
        model : `adadf.network.DualBranchModel`
            The model, updated in place.
        ds : `adadf.data.Dataset`
            The dataset; only its training split is used.
        table : `adadf.distributions.ClassDistributionTable`
            The table mined from epoch ``e - 1``.
        optimizer : `OptimizerState`
            The optimizer, whose learning rate is decayed at the end.
        e : `int`
            The 1-based epoch.
        traced : Dict[`int`, `int`], optional
            Dataset rows to trace, mapped to their training split position.

        Returns
        -------
        result : `EpochResult`
            Step losses, the next table and diagnostics.
        """
        config = self._config
        traced = traced or {}
        parameters = model.parameters()
        accumulator = ClassAccumulator(ds.num_classes)
        label_dists = np.full((ds.size, ds.num_classes), np.nan)
        fused_dists = np.full((ds.size, ds.num_classes), np.nan)
        steps = []
        traces = []
        degenerate = 0

        for step, indices in enumerate(
            batches(ds, config.batch_size, config.seed, e), start=1
        ):
            x = ds.features[indices]
            y = ds.labels[indices]
            model.zero_grad()
            with Tape() as tape:
                if config.target is TargetMode.single:
                    l_ce = cross_entropy(forward_target(model, x), y)
                    total = l_ce
                    value = l_ce.item()
                    terms = LossTerms(
                        l_ce=value,
                        l_kld=0.0,
                        l_rr=0.0,
                        l_total=value,
                    )
                else:
                    out = forward(model, x)
                    l_ce = cross_entropy(out.p_aux, y)
                    d_label = extract_label_distributions(out.p_aux)
                    accumulator.add(d_label, y)
                    w_avg = average_attention(out.w_aux, out.w_tar)
                    rank_avg = average_attention(out.rank_aux, out.rank_tar)
                    l_rr = rank_regularization(
                        rank_avg, config.delta, config.ratio
                    )
                    w = self._fusion_weights(w_avg.data)
                    if np.ptp(w_avg.data) == 0:
                        degenerate += 1
                    d_fused = fuse(d_label, table, y, w)
                    l_kld = kl_divergence(d_fused, out.p_tar)
                    total, terms = joint_loss(
                        l_ce, l_kld, l_rr, e, config.beta
                    )
                    label_dists[indices] = d_label
                    fused_dists[indices] = d_fused
                    for row, index in enumerate(indices):
                        if int(index) in traced:
                            traces.append(
                                FusionTrace(
                                    epoch=e,
                                    sample=traced[int(index)],
                                    index=int(index),
                                    label=int(y[row]),
                                    d_label=d_label[row].tolist(),
                                    class_row=table.rows[y[row]].tolist(),
                                    w=float(w[row]),
                                    d_fused=d_fused[row].tolist(),
                                )
                            )
                backward(total)
                tape.clear()
            adam_step(optimizer, parameters)
            record = StepRecord.from_terms(e, step, len(indices), terms)
            steps.append(record)
            self._logger.debug(
                "Completed step", epoch=e, step=step, **terms.__dict__
            )

        if config.target is TargetMode.single:
            next_table = table
        else:
            next_table = accumulator.mine(config.t, epoch=e)
            self._logger.debug(
                "Mined class distribution table",
                epoch=e,
                counts=accumulator.counts.tolist(),
                sources=[s.value for s in next_table.sources],
            )
            if next_table.fallback_classes:
                self._logger.warning(
                    "Class table rows fell back to threshold distributions",
                    epoch=e,
                    classes=next_table.fallback_classes,
                )
        if degenerate:
            self._logger.warning(
                "Attention weights were all equal in some batches",
                epoch=e,
                batches=degenerate,
            )
        decay_lr(optimizer)
        traces.sort(key=lambda trace: trace.sample)

        single = config.target is TargetMode.single
        return EpochResult(
            steps=steps,
            next_table=next_table,
            traces=traces,
            label_dists=None if single else label_dists,
            fused_dists=None if single else fused_dists,
            degenerate_batches=degenerate,
        )

    def _fusion_weights(self, w_avg: np.ndarray) -> np.ndarray:
        """Weights of the class rows in the fused targets."""
        target = self._config.target
        if target is TargetMode.label:
            return np.zeros(w_avg.shape[0])
        if target is TargetMode.class_:
            return np.ones(w_avg.shape[0])
        return normalize_weights(w_avg, self._config.w_min)

    def run(self, ds: Optional[Dataset] = None) -> RunResult:
        """Train for the configured number of epochs.

        Parameters
        ----------
        ds : `adadf.data.Dataset`, optional
            The dataset.  Built from the configuration by default.

        Returns
        -------
        result : `RunResult`
            Metrics, the trained model, step losses, class tables and
            fusion traces.

        Raises
        ------
        adadf.exceptions.ConfigError
            The dataset does not fit the model or has too few samples.
        """
        config = self._config
        if ds is None:
            ds = load_dataset(config.data)
        self._check_dataset(ds)
        model = init_model(config.model)
        optimizer = OptimizerState.create(
            model.parameters(), config.lr0, config.gamma
        )
        traced = self._traced_rows(ds)
        table = initial_table(ds.num_classes, config.t)
        tables = [ClassTableRecord.from_table(table)]
        steps: List[StepRecord] = []
        traces: List[FusionTrace] = []
        epochs: List[EpochMetrics] = []
        train_true = None
        onehot_l1 = None
        if ds.true_dists is not None:
            train_true = ds.true_dists[ds.train_indices]
            labels = ds.labels[ds.train_indices]
            onehot_l1 = mean_l1(one_hot(labels, ds.num_classes), train_true)

        initial_train = evaluate(model, ds, "train")
        initial_test = evaluate(model, ds, "test")
        self._logger.info(
            "Starting training",
            epochs=config.epochs,
            train_samples=int(ds.train_indices.size),
            test_samples=int(ds.test_indices.size),
            target=config.target.value,
            test_accuracy=initial_test,
        )

        for e in range(1, config.epochs + 1):
            lr = optimizer.lr
            result = self.train_epoch(model, ds, table, optimizer, e, traced)
            train_accuracy = evaluate(model, ds, "train")
            test_accuracy = evaluate(model, ds, "test")
            metrics = EpochMetrics(
                epoch=e,
                train_accuracy=train_accuracy,
                test_accuracy=test_accuracy,
                l_ce=_mean(s.l_ce for s in result.steps),
                l_kld=_mean(s.l_kld for s in result.steps),
                l_rr=_mean(s.l_rr for s in result.steps),
                l_total=_mean(s.l_total for s in result.steps),
                alpha1=result.steps[0].alpha1,
                alpha2=result.steps[0].alpha2,
                lr=lr,
                table_sources=[s.value for s in table.sources],
                next_table_sources=[
                    s.value for s in result.next_table.sources
                ],
                degenerate_batches=result.degenerate_batches,
                onehot_l1=onehot_l1,
            )
            if train_true is not None and result.fused_dists is not None:
                rows = ds.train_indices
                fused = result.fused_dists[rows]
                metrics.fused_l1 = mean_l1(fused, train_true)
                assert result.label_dists is not None
                label = result.label_dists[rows]
                metrics.label_l1 = mean_l1(label, train_true)
            epochs.append(metrics)
            steps.extend(result.steps)
            traces.extend(result.traces)
            table = result.next_table
            if config.target is not TargetMode.single:
                tables.append(ClassTableRecord.from_table(table))
            self._logger.info(
                "Completed epoch",
                epoch=e,
                train_accuracy=train_accuracy,
                test_accuracy=test_accuracy,
                l_total=metrics.l_total,
                lr=lr,
            )

        if epochs:
            best = max(epochs, key=lambda m: m.test_accuracy)
            best_accuracy = best.test_accuracy
            best_epoch = best.epoch
            last_accuracy = epochs[-1].test_accuracy
        else:
            best_accuracy = initial_test
            best_epoch = 0
            last_accuracy = initial_test
        run_metrics = RunMetrics(
            settings=config.to_dict(),
            initial_train_accuracy=initial_train,
            initial_test_accuracy=initial_test,
            epochs=epochs,
            best_test_accuracy=best_accuracy,
            best_epoch=best_epoch,
            last_test_accuracy=last_accuracy,
        )
        self._logger.info(
            "Finished training",
            best_test_accuracy=best_accuracy,
            best_epoch=best_epoch,
            last_test_accuracy=last_accuracy,
        )
        return RunResult(
            metrics=run_metrics,
            model=model,
            steps=steps,
            tables=tables,
            traces=traces,
        )

    def _check_dataset(self, ds: Dataset) -> None:
        model = self._config.model
        if ds.feature_dim != model.input_dim:
            msg = (
                f"dataset has {ds.feature_dim} features, model expects"
                f" {model.input_dim}"
            )
            raise ConfigError(msg)
        if ds.num_classes != model.num_classes:
            msg = (
                f"dataset has {ds.num_classes} classes, model expects"
                f" {model.num_classes}"
            )
            raise ConfigError(msg)
        if ds.train_indices.size < 2:
            raise ConfigError("at least two training samples are required")
        if ds.test_indices.size < 1:
            raise ConfigError("at least one test sample is required")

    def _traced_rows(self, ds: Dataset) -> Dict[int, int]:
        """Map dataset rows of the traced samples to their split position."""
        train_indices = ds.train_indices
        traced = {}
        for sample in self._config.trace_samples:
            if sample < train_indices.size:
                traced[int(train_indices[sample])] = sample
            else:
                self._logger.warning(
                    "Ignoring trace sample outside the training split",
                    sample=sample,
                    train_samples=int(train_indices.size),
                )
        return traced


def _mean(values: Iterable[float]) -> float:
    items = list(values)
    return float(sum(items) / len(items))


def run(
    config: RunConfig,
    ds: Optional[Dataset] = None,
    logger: Optional[BoundLogger] = None,
) -> RunResult:
    """Train one model as described by ``config``.

    A shorthand for ``Trainer(config, logger).run(ds)``.
    """
    return Trainer(config, logger).run(ds)
