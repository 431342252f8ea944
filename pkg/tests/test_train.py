from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sasquatch.data import Dataset, generate_lines
from sasquatch.errors import StructuralError
from sasquatch.model import ModelConfig, init_params
from sasquatch.train import (
    OptimizerState,
    TrainConfig,
    adam_step,
    evaluate,
    grad_adjoint,
    grad_finite_difference,
    grad_parameter_shift,
    loss_derivative,
    loss_l1,
    loss_soft_margin,
    train_model,
)

TINY = ModelConfig("amplitude", 4, 2, 1, patch_size=2)


def rel_err(a, b) -> float:
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-300))


def gradient_cases(count: int):
    """Seeded small models covering both encodings and losses, l in {0,1,2}, QFT on/off."""
    rng = np.random.default_rng(2024)
    out = []
    for k in range(count):
        encoding = ("angle", "amplitude")[k % 2]
        n = int(rng.integers(1, 3))
        eps = int(rng.choice([1, 2, 3, 4])) if encoding == "angle" else int(rng.choice([2, 4]))
        config = ModelConfig(encoding, n, eps, kernel_layers=k % 3, depth=1 + (k % 5 == 4),
                             use_qft=bool(k % 4 != 3), patch_size=2, trainable_embedding=bool(k % 3 != 1))
        params = init_params(config, 100 + k)
        params.embedder.positional = rng.normal(scale=0.3, size=params.embedder.positional.shape)
        params.weight, params.bias = rng.normal(), rng.normal(scale=0.2)
        image = rng.uniform(0.05, 1.0, size=(2, 2 * n))
        label = int(rng.choice([-1, 1]))
        loss = ("l1", "soft_margin")[(k // 2) % 2]
        out.append((config, params, image, label, loss))
    return out


@pytest.mark.parametrize("case", gradient_cases(24), ids=lambda c: f"{c[0].encoding}-l{c[0].kernel_layers}-{c[4]}")
def test_gradient_engines_agree(case):
    config, params, image, label, loss = case
    adj = grad_adjoint(config, params, image, label, loss)
    shift = grad_parameter_shift(config, params, image, label, loss)
    fd = grad_finite_difference(config, params, image, label, loss, h=1e-5)
    assert adj.shape == (params.num_trainable,)
    assert rel_err(adj, shift) < 1e-8
    assert rel_err(adj, fd) < 1e-6
    assert rel_err(shift, fd) < 1e-6


def test_loss_examples():
    assert loss_l1(1.0, 1) == 0.0
    assert loss_l1(-1.0, 1) == 2.0
    assert loss_soft_margin(0.0, 1) == pytest.approx(math.log(2))
    assert loss_soft_margin(1000.0, -1) == pytest.approx(1000.0)
    assert loss_soft_margin(1000.0, 1) == pytest.approx(0.0, abs=1e-300)


@settings(max_examples=100, deadline=None)
@given(logit=st.floats(-50, 50), label=st.sampled_from([-1, 1]))
def test_losses_nonnegative(logit, label):
    assert loss_l1(logit, label) >= 0
    assert loss_soft_margin(logit, label) >= 0


@settings(max_examples=100, deadline=None)
@given(a=st.floats(-30, 30), b=st.floats(-30, 30))
def test_soft_margin_monotone_in_margin(a, b):
    lo, hi = sorted((a, b))
    assert loss_soft_margin(lo, 1) >= loss_soft_margin(hi, 1)


@settings(max_examples=60, deadline=None)
@given(logit=st.floats(-5, 5), label=st.sampled_from([-1, 1]))
def test_loss_derivatives_match_differences(logit, label):
    h = 1e-6
    for kind, fn in (("l1", loss_l1), ("soft_margin", loss_soft_margin)):
        if kind == "l1" and abs(label - logit) < 1e-3:
            continue
        fd = (fn(logit + h, label) - fn(logit - h, label)) / (2 * h)
        assert loss_derivative(logit, label, kind) == pytest.approx(fd, abs=1e-6)


def adam_reference(params, grads_seq, lr, b1=0.9, b2=0.999, eps=1e-8):
    """Scalar loop form of bias-corrected Adam."""
    params = list(params)
    m = [0.0] * len(params)
    v = [0.0] * len(params)
    for t, grads in enumerate(grads_seq, start=1):
        for i, g in enumerate(grads):
            m[i] = b1 * m[i] + (1 - b1) * g
            v[i] = b2 * v[i] + (1 - b2) * g * g
            params[i] -= lr * (m[i] / (1 - b1**t)) / (math.sqrt(v[i] / (1 - b2**t)) + eps)
    return np.array(params)


def test_adam_matches_reference():
    rng = np.random.default_rng(0)
    params = rng.normal(size=5)
    grads_seq = rng.normal(size=(7, 5))
    state = OptimizerState.zeros(5)
    current = params
    for g in grads_seq:
        current, state = adam_step(current, g, state, 0.01)
    assert state.t == 7
    assert np.allclose(current, adam_reference(params, grads_seq, 0.01), atol=1e-15)


def test_adam_first_step_is_scale_invariant():
    rng = np.random.default_rng(1)
    params, grads = rng.normal(size=6), rng.normal(size=6)
    a, _ = adam_step(params, grads, OptimizerState.zeros(6), 0.001)
    b, _ = adam_step(params, 10 * grads, OptimizerState.zeros(6), 0.001)
    step_a, step_b = a - params, b - params
    assert np.max(np.abs(step_a - step_b) / np.abs(step_a)) < 1e-6


def test_adam_zero_learning_rate_is_noop():
    params = np.arange(3.0)
    out, _ = adam_step(params, np.ones(3), OptimizerState.zeros(3), 0.0)
    assert np.array_equal(out, params)
    with pytest.raises(StructuralError):
        adam_step(params, np.ones(2), OptimizerState.zeros(3), 0.1)


def test_train_config_validation():
    with pytest.raises(StructuralError):
        TrainConfig(epochs=0)
    with pytest.raises(StructuralError):
        TrainConfig(loss_kind="hinge")
    with pytest.raises(StructuralError):
        TrainConfig(gradient_engine="spsa")
    with pytest.raises(StructuralError):
        TrainConfig(learning_rate=-1.0)


def test_evaluate_examples():
    data = generate_lines(20, 3)
    params = init_params(TINY, 0)
    loss, acc = evaluate(TINY, params, data)
    _, flipped = evaluate(TINY, params, data.flipped())
    assert flipped == pytest.approx(1 - acc)
    assert loss >= 0
    # a huge positive bias makes every prediction +1
    params.bias = 10.0
    positives = data.subset(np.flatnonzero(data.labels == 1))
    assert evaluate(TINY, params, positives)[1] == 1.0
    with pytest.raises(StructuralError):
        evaluate(TINY, params, Dataset(np.zeros((0, 4, 4)), np.zeros(0)))


def test_zero_learning_rate_keeps_parameters():
    data = generate_lines(8, 1)
    params = init_params(TINY, 2)
    trained, history = train_model(TINY, TrainConfig(epochs=2, learning_rate=0.0, batch_size=4), data, data, params)
    assert np.array_equal(trained.to_vector(), params.to_vector())
    assert history[0].train_loss == history[1].train_loss


def test_training_is_deterministic():
    train, val = generate_lines(16, 1), generate_lines(8, 2)
    cfg = TrainConfig(epochs=3, learning_rate=0.05, batch_size=5, seed=4)
    runs = [train_model(TINY, cfg, train, val, init_params(TINY, 9)) for _ in range(2)]
    assert [m.row() for m in runs[0][1]] == [m.row() for m in runs[1][1]]
    assert np.array_equal(runs[0][0].to_vector(), runs[1][0].to_vector())


def test_training_reduces_loss():
    train, val = generate_lines(32, 5), generate_lines(16, 6)
    cfg = TrainConfig(epochs=15, learning_rate=0.05, batch_size=8, seed=0)
    calls = []
    _, history = train_model(TINY, cfg, train, val, init_params(TINY, 1), on_epoch=lambda m, p: calls.append(m))
    assert len(history) == 15 and calls == history
    assert history[-1].train_loss < history[0].train_loss


def test_parameter_shift_engine_trains_identically():
    train = generate_lines(8, 7)
    params = init_params(TINY, 3)
    outs = [train_model(TINY, TrainConfig(epochs=1, learning_rate=0.1, batch_size=4, gradient_engine=e),
                        train, train, params)[0].to_vector() for e in ("adjoint", "parameter_shift")]
    assert np.allclose(outs[0], outs[1], atol=1e-10)
