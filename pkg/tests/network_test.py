"""Tests for the dual-branch model."""

from __future__ import annotations

import json
from typing import TYPE_CHECKING

import numpy as np
import pytest

from adadf.autodiff import Tape, Tensor, backward, tensor_sum
from adadf.exceptions import (
    CheckpointError,
    ConfigError,
    ContractError,
    DimensionError,
)
from adadf.losses import rank_regularization
from adadf.network import (
    forward,
    forward_target,
    inference,
    init_model,
    load_checkpoint,
    save_checkpoint,
)
from tests.support.models import tiny_batch, tiny_model, tiny_model_config

if TYPE_CHECKING:
    from pathlib import Path


def test_init_shapes_and_order() -> None:
    model = tiny_model()
    names = [name for name, _ in model.named_parameters()]

    assert names[0].startswith("extractor")
    assert names[-1].startswith("tar_classifier")
    shapes = dict((n, t.shape) for n, t in model.named_parameters())
    assert shapes["extractor.0.weight"] == (8, 8)
    assert shapes["aux_attention.weight"] == (8, 1)
    assert shapes["tar_classifier.weight"] == (8, 3)
    assert shapes["tar_classifier.bias"] == (1, 3)


def test_init_scale() -> None:
    model = tiny_model()
    bound = 1.0 / np.sqrt(8)
    for _, tensor in model.named_parameters():
        assert np.all(np.abs(tensor.data) <= bound)


def test_init_deterministic() -> None:
    first = tiny_model(seed=5)
    second = tiny_model(seed=5)
    other = tiny_model(seed=6)
    for (_, a), (_, b), (_, c) in zip(
        first.named_parameters(),
        second.named_parameters(),
        other.named_parameters(),
    ):
        assert np.array_equal(a.data, b.data)
        assert not np.array_equal(a.data, c.data)


def test_init_branches_differ() -> None:
    model = tiny_model()
    aux = model.aux_branch.layers[0].weight.data
    tar = model.tar_branch.layers[0].weight.data
    assert aux.shape == tar.shape
    assert not np.array_equal(aux, tar)


def test_init_invalid() -> None:
    with pytest.raises(ConfigError):
        init_model(tiny_model_config(extractor_dims=()))
    with pytest.raises(ConfigError):
        init_model(tiny_model_config(branch_dims=(8, 0)))


def test_parameters_frozen_and_baseline() -> None:
    model = tiny_model(freeze_extractor=True)
    names = [name for name, _ in model.parameters()]
    assert not any(name.startswith("extractor") for name in names)
    for _, tensor in model.extractor.named_parameters("extractor"):
        assert not tensor.requires_grad

    baseline = tiny_model(use_attention=False)
    modules = {name.split(".")[0] for name, _ in baseline.parameters()}
    assert modules == {"extractor", "tar_branch", "tar_classifier"}


def test_forward_outputs() -> None:
    model = tiny_model()
    x, _ = tiny_batch(5)
    out = forward(model, x)

    assert out.p_aux.shape == (5, 3)
    assert out.p_tar.shape == (5, 3)
    assert np.allclose(out.p_aux.data.sum(axis=1), 1.0, atol=1e-12)
    assert np.allclose(out.p_tar.data.sum(axis=1), 1.0, atol=1e-12)
    assert out.w_aux.shape == (5,)
    assert np.all((out.w_aux.data > 0) & (out.w_aux.data < 1))
    assert np.all((out.w_tar.data > 0) & (out.w_tar.data < 1))
    assert out.rank_aux is out.w_aux


def test_forward_single_sample() -> None:
    model = tiny_model()
    x, _ = tiny_batch(1)
    out = forward(model, x)
    assert out.p_tar.shape == (1, 3)
    assert out.w_tar.shape == (1,)


def test_forward_duplicated_rows() -> None:
    model = tiny_model(seed=4)
    x, _ = tiny_batch(4, seed=4)
    doubled = np.concatenate([x, x[[2]]])
    out = forward(model, doubled)
    for name in ("p_aux", "p_tar", "w_aux", "w_tar"):
        values = getattr(out, name).data
        assert np.allclose(values[4], values[2], rtol=0, atol=1e-15), name


def test_forward_errors() -> None:
    model = tiny_model()
    with pytest.raises(DimensionError):
        forward(model, np.zeros((4, 7)))
    with pytest.raises(ContractError):
        forward(model, np.zeros((0, 8)))


def test_forward_target_matches_forward() -> None:
    model = tiny_model()
    x, _ = tiny_batch(6)
    assert np.array_equal(
        forward(model, x).p_tar.data, forward_target(model, x).data
    )


def test_inference_ignores_auxiliary_branch() -> None:
    model = tiny_model()
    x, _ = tiny_batch(20, seed=4)
    before = inference(model, x)

    for _, tensor in model.auxiliary_parameters():
        tensor.data = np.zeros_like(tensor.data)
    after = inference(model, x)

    assert before.dtype == np.int64
    assert np.array_equal(before, after)


def test_inference_records_nothing() -> None:
    model = tiny_model()
    x, _ = tiny_batch(4)
    with Tape() as tape:
        inference(model, x)
    assert len(tape) == 0


def test_detach_rank_features() -> None:
    model = tiny_model(detach_rank_features=True)
    x, _ = tiny_batch(6, seed=2)
    with Tape():
        out = forward(model, x)
        w_avg = (out.rank_aux + out.rank_tar) * 0.5
        loss = rank_regularization(w_avg, 10.0, 0.5)
    backward(loss)

    assert model.aux_attention.weight.grad is not None
    assert model.tar_attention.weight.grad is not None
    for _, tensor in model.tar_branch.named_parameters("tar_branch"):
        assert tensor.grad is None
    for _, tensor in model.extractor.named_parameters("extractor"):
        assert tensor.grad is None


def test_rank_gradient_reaches_features() -> None:
    model = tiny_model()
    x, _ = tiny_batch(6, seed=2)
    with Tape():
        out = forward(model, x)
        loss = rank_regularization((out.w_aux + out.w_tar) * 0.5, 10.0, 0.5)
    backward(loss)
    grads = [t.grad for _, t in model.extractor.named_parameters("e")]
    assert any(g is not None and np.any(g != 0) for g in grads)


def test_gradient_reaches_every_module() -> None:
    model = tiny_model()
    x, _ = tiny_batch(6)
    with Tape():
        out = forward(model, x)
        loss = tensor_sum(out.p_tar * Tensor(np.arange(18.0).reshape(6, 3)))
        loss = loss + tensor_sum(out.p_aux * Tensor(np.ones((6, 3)) * 2.0))
    backward(loss)
    for name, tensor in model.named_parameters():
        assert tensor.grad is not None, name


def test_checkpoint_round_trip(tmp_path: Path) -> None:
    model = tiny_model(seed=3)
    path = tmp_path / "checkpoint.json"
    save_checkpoint(model, path, {"seed": 3})
    loaded, settings = load_checkpoint(path)

    assert settings == {"seed": 3}
    assert loaded.config == model.config
    for (name, a), (_, b) in zip(
        model.named_parameters(), loaded.named_parameters()
    ):
        assert np.array_equal(a.data, b.data), name

    x, _ = tiny_batch(10)
    assert np.array_equal(inference(model, x), inference(loaded, x))

    second = tmp_path / "second.json"
    save_checkpoint(loaded, second, {"seed": 3})
    assert path.read_bytes() == second.read_bytes()
    assert b"\r\n" not in path.read_bytes()


def test_checkpoint_errors(tmp_path: Path) -> None:
    model = tiny_model()
    path = tmp_path / "checkpoint.json"
    save_checkpoint(model, path)
    data = json.loads(path.read_text())

    data["version"] = 99
    bad_version = tmp_path / "version.json"
    bad_version.write_text(json.dumps(data))
    with pytest.raises(CheckpointError):
        load_checkpoint(bad_version)

    data = json.loads(path.read_text())
    data["parameters"] = data["parameters"][:-1]
    missing = tmp_path / "missing.json"
    missing.write_text(json.dumps(data))
    with pytest.raises(CheckpointError) as excinfo:
        load_checkpoint(missing)
    assert "tar_classifier.bias" in str(excinfo.value)

    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "nonexistent.json")


def test_copy_is_independent() -> None:
    model = tiny_model()
    clone = model.copy()
    model.tar_classifier.weight.data += 1.0
    assert not np.array_equal(
        model.tar_classifier.weight.data, clone.tar_classifier.weight.data
    )
