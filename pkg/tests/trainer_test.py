"""Tests for the optimizer, the epoch loop and whole runs."""

from __future__ import annotations

from typing import TYPE_CHECKING

import numpy as np
import pytest

from adadf.autodiff import Tensor, grad_check
from adadf.config import TargetMode
from adadf.data import Dataset, load_dataset
from adadf.distributions import (
    average_attention,
    extract_label_distributions,
    fuse,
    initial_table,
    normalize_weights,
)
from adadf.exceptions import ConfigError, ContractError
from adadf.losses import (
    alpha1,
    alpha2,
    cross_entropy,
    joint_loss,
    kl_divergence,
    rank_regularization,
)
from adadf.network import forward, inference, init_model
from adadf.trainer import (
    OptimizerState,
    Trainer,
    adam_step,
    decay_lr,
    evaluate,
    run,
)
from tests.support.models import tiny_batch, tiny_model
from tests.support.oracles import mine_reference
from tests.support.settings import build_config

if TYPE_CHECKING:
    from adadf.config import RunConfig


def test_adam_first_step() -> None:
    param = Tensor([1.0, -2.0], requires_grad=True)
    param.grad = np.array([0.5, -3.0])
    state = OptimizerState.create([("p", param)], 0.001, 0.9)
    adam_step(state, [("p", param)])

    assert state.step == 1
    assert np.allclose(param.data, [0.999, -1.999], rtol=0, atol=1e-10)
    assert np.allclose(state.m["p"], [0.05, -0.3])


def test_adam_skips_and_checks() -> None:
    frozen = Tensor([1.0], requires_grad=True)
    state = OptimizerState.create([("frozen", frozen)], 0.001, 0.9)
    adam_step(state, [("frozen", frozen)])
    assert frozen.data[0] == 1.0

    late = Tensor([[1.0, 1.0]], requires_grad=True)
    late.grad = np.array([[1.0, -1.0]])
    adam_step(state, [("late", late)])
    assert "late" in state.m

    late.grad = np.array([1.0, -1.0])
    with pytest.raises(ContractError):
        adam_step(state, [("late", late)])


def test_adam_keeps_dtype() -> None:
    param = Tensor([1.0], dtype="float32", requires_grad=True)
    param.grad = np.array([1.0], dtype=np.float32)
    state = OptimizerState.create([("p", param)], 0.01, 0.9)
    adam_step(state, [("p", param)])
    assert param.dtype == np.float32


def test_decay_lr() -> None:
    state = OptimizerState(lr=0.001, gamma=0.9)
    decay_lr(state)
    assert state.lr == pytest.approx(0.0009, abs=1e-15)
    decay_lr(state)
    assert state.lr == pytest.approx(0.00081, abs=1e-15)
    decay_lr(state, gamma=0.5)
    assert state.lr == pytest.approx(0.000405, abs=1e-15)


def test_joint_loss_gradient() -> None:
    for seed in range(100):
        model = tiny_model(seed=seed)
        x, y = tiny_batch(6, seed=seed)
        e = 1 + seed % 5

        out = forward(model, x)
        d_label = extract_label_distributions(out.p_aux)
        w = normalize_weights(
            average_attention(out.w_aux, out.w_tar).data, 0.2
        )
        d_fused = fuse(d_label, initial_table(3, 0.7), y, w)

        def loss(_: Tensor) -> Tensor:
            out = forward(model, x)
            l_ce = cross_entropy(out.p_aux, y)
            rank = average_attention(out.rank_aux, out.rank_tar)
            l_rr = rank_regularization(rank, 0.07, 0.7)
            l_kld = kl_divergence(d_fused, out.p_tar)
            total, _ = joint_loss(l_ce, l_kld, l_rr, e, 3)
            return total

        parameters = model.named_parameters()
        name, param = parameters[seed % len(parameters)]
        assert grad_check(loss, param) < 1e-4, (seed, name)


def test_evaluate(config: RunConfig, dataset: Dataset) -> None:
    model = init_model(config.model)
    accuracy = evaluate(model, dataset)
    assert 0.0 <= accuracy <= 1.0
    assert accuracy == evaluate(model, dataset, "test")
    assert 0.0 <= evaluate(model, dataset, "train") <= 1.0

    with pytest.raises(ContractError):
        evaluate(model, dataset, "validation")
    no_test = Dataset(
        features=dataset.features,
        labels=dataset.labels,
        train=np.ones(dataset.size, dtype=bool),
        num_classes=dataset.num_classes,
    )
    with pytest.raises(ContractError):
        evaluate(model, no_test)


def test_evaluate_examples() -> None:
    model = tiny_model(seed=2)
    x, _ = tiny_batch(8, seed=2)
    predicted = inference(model, x)
    train = np.array([True] * 4 + [False] * 4)
    ds = Dataset(features=x, labels=predicted, train=train, num_classes=3)
    assert evaluate(model, ds, "test") == 1.0
    assert evaluate(model, ds, "train") == 1.0

    labels = predicted.copy()
    labels[[4, 6]] = (labels[[4, 6]] + 1) % 3
    labels[0] = (labels[0] + 2) % 3
    ds = Dataset(features=x, labels=labels, train=train, num_classes=3)
    assert evaluate(model, ds, "test") == 0.5
    assert evaluate(model, ds, "train") == 0.75

    order = np.random.default_rng(0).permutation(8)
    shuffled = Dataset(
        features=x[order],
        labels=labels[order],
        train=train[order],
        num_classes=3,
    )
    assert evaluate(model, shuffled, "test") == 0.5
    assert evaluate(model, shuffled, "train") == 0.75


def test_train_epoch_mines_accumulated_table(
    config: RunConfig, dataset: Dataset
) -> None:
    trainer = Trainer(config)
    model = init_model(config.model)
    optimizer = OptimizerState.create(model.parameters(), 0.001, 0.9)
    table = initial_table(3, config.t)
    result = trainer.train_epoch(model, dataset, table, optimizer, 1)

    assert sum(s.batch_size for s in result.steps) == 48
    assert optimizer.lr == pytest.approx(0.0009)
    assert result.label_dists is not None
    rows = dataset.train_indices
    expected = mine_reference(
        result.label_dists[rows].tolist(),
        dataset.labels[rows].tolist(),
        3,
        config.t,
    )
    assert np.max(np.abs(result.next_table.rows - expected)) <= 1e-12
    assert result.next_table.epoch == 1

    for step in result.steps:
        assert step.alpha1 is not None
        assert step.alpha2 is not None
        expected_total = (
            step.l_rr + step.alpha1 * step.l_ce + step.alpha2 * step.l_kld
        )
        assert abs(step.l_total - expected_total) <= 1e-9


def test_run(config: RunConfig, dataset: Dataset) -> None:
    result = run(config, dataset)
    metrics = result.metrics

    assert [m.epoch for m in metrics.epochs] == [1, 2]
    assert metrics.epochs[0].lr == pytest.approx(0.001)
    assert metrics.epochs[1].lr == pytest.approx(0.0009)
    for epoch in metrics.epochs:
        assert epoch.alpha1 == alpha1(epoch.epoch, config.beta)
        assert epoch.alpha2 == alpha2(epoch.epoch, config.beta)
    assert metrics.epochs[0].table_sources == ["threshold"] * 3
    best = max(metrics.epochs, key=lambda m: m.test_accuracy)
    assert metrics.best_test_accuracy == best.test_accuracy
    assert metrics.best_epoch == best.epoch
    assert metrics.last_test_accuracy == metrics.epochs[-1].test_accuracy
    assert metrics.settings["seed"] == 7

    assert [t.epoch for t in result.tables] == [0, 1, 2]
    assert len(result.steps) == 2 * 6
    assert [(t.epoch, t.sample) for t in result.traces] == [
        (1, 0),
        (1, 1),
        (2, 0),
        (2, 1),
    ]
    for trace in result.traces:
        assert trace.index == int(dataset.train_indices[trace.sample])
        mixed = [
            trace.w * c + (1.0 - trace.w) * d
            for c, d in zip(trace.class_row, trace.d_label)
        ]
        assert np.allclose(mixed, trace.d_fused, rtol=0, atol=1e-12)
        assert 0.2 <= trace.w <= 1.0

    epoch = metrics.epochs[-1]
    assert epoch.onehot_l1 is not None
    assert epoch.fused_l1 is not None
    assert epoch.label_l1 is not None


def test_run_deterministic(config: RunConfig, dataset: Dataset) -> None:
    first = run(config, dataset)
    second = run(config, dataset)
    assert first.metrics.json() == second.metrics.json()
    for (name, a), (_, b) in zip(
        first.model.named_parameters(), second.model.named_parameters()
    ):
        assert np.array_equal(a.data, b.data), name


def test_run_without_epochs(dataset: Dataset) -> None:
    config = build_config(epochs=0)
    result = run(config, dataset)
    metrics = result.metrics
    assert metrics.epochs == []
    assert metrics.best_epoch == 0
    assert metrics.best_test_accuracy == metrics.initial_test_accuracy
    assert len(result.tables) == 1


def test_run_single_label_baseline(dataset: Dataset) -> None:
    config = build_config(target="single")
    assert config.target is TargetMode.single
    result = run(config, dataset)

    assert len(result.tables) == 1
    assert result.traces == []
    for step in result.steps:
        assert step.l_kld == 0.0
        assert step.l_rr == 0.0
        assert step.l_total == step.l_ce
        assert step.alpha1 is None
        assert step.alpha2 is None
    for epoch in result.metrics.epochs:
        assert epoch.alpha1 is None
        assert epoch.alpha2 is None
    assert all(
        not name.startswith("aux") for name, _ in result.model.parameters()
    )


@pytest.mark.parametrize("target", ["label", "class"])
def test_run_ablated_targets(dataset: Dataset, target: str) -> None:
    result = run(build_config(target=target), dataset)
    expected = 0.0 if target == "label" else 1.0
    assert all(trace.w == expected for trace in result.traces)
    for trace in result.traces:
        source = trace.d_label if target == "label" else trace.class_row
        assert trace.d_fused == pytest.approx(source, abs=1e-15)


def test_run_frozen_extractor(dataset: Dataset) -> None:
    config = build_config(freeze_extractor=True)
    initial = init_model(config.model)
    result = run(config, dataset)
    before = dict(initial.extractor.named_parameters("extractor"))
    after = dict(result.model.extractor.named_parameters("extractor"))
    for name, tensor in before.items():
        assert np.array_equal(tensor.data, after[name].data), name


def test_inference_uses_target_branch_only(
    config: RunConfig, dataset: Dataset
) -> None:
    result = run(config, dataset)
    model = result.model
    train = evaluate(model, dataset, "train")
    test = evaluate(model, dataset, "test")
    for _, tensor in model.auxiliary_parameters():
        tensor.data = np.zeros_like(tensor.data)
    assert evaluate(model, dataset, "train") == train
    assert evaluate(model, dataset, "test") == test


def test_run_ignores_untraceable_samples(dataset: Dataset) -> None:
    config = build_config(trace_samples=[1, 1000], epochs=1)
    result = run(config, dataset)
    assert [t.sample for t in result.traces] == [1]


def test_run_rejects_mismatched_dataset(
    config: RunConfig, dataset: Dataset
) -> None:
    narrow = Dataset(
        features=dataset.features[:, :4],
        labels=dataset.labels,
        train=dataset.train,
        num_classes=3,
    )
    with pytest.raises(ConfigError):
        run(config, narrow)

    tiny = Dataset(
        features=dataset.features[:3],
        labels=dataset.labels[:3],
        train=np.array([True, False, False]),
        num_classes=3,
    )
    with pytest.raises(ConfigError):
        run(config, tiny)


@pytest.mark.slow
def test_fused_targets_approach_truth() -> None:
    config = build_config(
        num_classes=5,
        input_dim=32,
        extractor_dims=[64],
        branch_dims=[64, 32],
        n_per_class=500,
        ambiguity=0.6,
        batch_size=64,
        epochs=10,
        beta=3,
        seed=0,
    )
    result = run(config, load_dataset(config.data))
    epochs = result.metrics.epochs
    final = epochs[-1]
    assert final.fused_l1 is not None
    assert final.onehot_l1 is not None
    assert epochs[0].label_l1 is not None
    assert final.fused_l1 < final.onehot_l1
    assert final.fused_l1 < epochs[0].label_l1
