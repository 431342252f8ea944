"""Losses, gradient engines, ADAM and the epoch loop."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .data import Dataset
from .errors import StructuralError
from .embed import normalize_tokens, patch_array
from .model import ModelConfig, ModelParams, encoding_inputs, tokens_for

LOSS_KINDS = ("l1", "soft_margin")
GRADIENT_ENGINES = ("adjoint", "parameter_shift")

# four-term shift rule for controlled rotations
_D_PLUS = (math.sqrt(2) + 1) / (4 * math.sqrt(2))
_D_MINUS = (math.sqrt(2) - 1) / (4 * math.sqrt(2))


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    learning_rate: float = 0.001
    batch_size: int = 16
    loss_kind: str = "l1"
    seed: int = 0
    gradient_engine: str = "adjoint"

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise StructuralError("epochs and batch_size must be >= 1")
        if not self.learning_rate >= 0:
            raise StructuralError("learning_rate must be non-negative")
        if self.loss_kind not in LOSS_KINDS:
            raise StructuralError(f"loss_kind must be one of {LOSS_KINDS}")
        if self.gradient_engine not in GRADIENT_ENGINES:
            raise StructuralError(f"gradient_engine must be one of {GRADIENT_ENGINES}")


@dataclass
class OptimizerState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, size: int) -> OptimizerState:
        return cls(np.zeros(size), np.zeros(size))


@dataclass
class Metrics:
    epoch: int
    train_loss: float
    train_accuracy: float
    val_loss: float
    val_accuracy: float

    def row(self) -> dict:
        return {
            "epoch": self.epoch,
            "train_loss": self.train_loss,
            "train_acc": self.train_accuracy,
            "val_loss": self.val_loss,
            "val_acc": self.val_accuracy,
        }


# --------------------------------------------------------------------------- losses


def loss_l1(logit, label):
    return np.abs(np.asarray(label, dtype=float) - logit)


def loss_soft_margin(logit, label):
    """log(1 + exp(-label * logit)) without overflow."""
    z = -np.asarray(label, dtype=float) * logit
    return np.logaddexp(0.0, z)


def loss_value(logit, label, kind: str):
    if kind == "l1":
        return loss_l1(logit, label)
    if kind == "soft_margin":
        return loss_soft_margin(logit, label)
    raise StructuralError(f"unknown loss {kind!r}")


def loss_derivative(logit, label, kind: str):
    """d loss / d logit."""
    label = np.asarray(label, dtype=float)
    if kind == "l1":
        return -np.sign(label - logit)
    if kind == "soft_margin":
        z = -label * logit
        return -label * 0.5 * (1.0 + np.tanh(0.5 * z))  # -label * sigmoid(z)
    raise StructuralError(f"unknown loss {kind!r}")


# --------------------------------------------------------------------------- gradients


def _token_grads_from_inputs(config: ModelConfig, tokens: np.ndarray, g_inputs: np.ndarray) -> np.ndarray:
    """Map d e / d (evaluator inputs) to d e / d tokens."""
    g = g_inputs.reshape(tokens.shape)
    if config.encoding == "angle":
        return g
    unit, norms = normalize_tokens(tokens)
    # d(x/|x|)/dx = (I - u u^T)/|x|
    return (g - unit * np.sum(unit * g, axis=-1, keepdims=True)) / norms[..., None]


def _assemble(config, params, images, e, g_theta, g_tokens, labels, loss_kind):
    """Chain rule through the affine head and the patch embedding."""
    logits = params.weight * e + params.bias
    dl = loss_derivative(logits, labels, loss_kind)
    parts = [dl[:, None] * params.weight * g_theta, (dl * e)[:, None], dl[:, None]]
    if params.embedder.trainable:
        patches = patch_array(images, config.patch_size)
        g_tok = dl[:, None, None] * params.weight * g_tokens
        parts.append(np.einsum("bnp,bne->bpe", patches, g_tok).reshape(len(e), -1))
        parts.append(g_tok.reshape(len(e), -1))
    return loss_value(logits, labels, loss_kind), logits, np.concatenate(parts, axis=1)


def batch_gradients(config: ModelConfig, params: ModelParams, images, labels, loss_kind: str,
                    engine: str = "adjoint"):
    """Per-sample (loss, logit, gradient) for a batch; gradients in ``to_vector`` order."""
    images = np.asarray(images, dtype=float)
    labels = np.asarray(labels, dtype=float)
    tokens = tokens_for(config, params, images)
    inputs = encoding_inputs(config, tokens)
    ev = config.evaluator()
    if engine == "adjoint":
        e, g_theta, g_in = ev.expectation_and_grad(params.theta(), inputs)
    elif engine == "parameter_shift":
        e, g_theta, g_in = _shift_rule(config, params, inputs)
    else:
        raise StructuralError(f"unknown gradient engine {engine!r}")
    g_tokens = _token_grads_from_inputs(config, tokens, g_in)
    return _assemble(config, params, images, e, g_theta, g_tokens, labels, loss_kind)


def _shift_rule(config: ModelConfig, params: ModelParams, inputs: np.ndarray):
    ev = config.evaluator()
    theta = params.theta()
    e = ev.expectation(theta, inputs)
    g_theta = np.zeros((inputs.shape[0], theta.size))
    nk = config.num_kernel_params

    def shifted(j, s):
        t = theta.copy()
        t[j] += s
        return ev.expectation(t, inputs)

    for j in range(theta.size):
        controlled = j >= nk and (j - nk) % 2 == 0  # CRX / CRZ slots of the perceptron
        if controlled:
            g_theta[:, j] = _D_PLUS * (shifted(j, math.pi / 2) - shifted(j, -math.pi / 2)) - _D_MINUS * (
                shifted(j, 3 * math.pi / 2) - shifted(j, -3 * math.pi / 2))
        else:
            g_theta[:, j] = 0.5 * (shifted(j, math.pi / 2) - shifted(j, -math.pi / 2))

    g_in = np.zeros_like(inputs)
    if params.embedder.trainable:
        if config.encoding == "angle":
            for j in range(inputs.shape[1]):
                up, down = inputs.copy(), inputs.copy()
                up[:, j] += math.pi / 2
                down[:, j] -= math.pi / 2
                g_in[:, j] = 0.5 * (ev.expectation(theta, up) - ev.expectation(theta, down))
        else:
            # injected amplitudes have no shift rule; take the analytic co-vector
            _, _, g_in = ev.expectation_and_grad(theta, inputs)
    return e, g_theta, g_in


def _single(config, params, image, label, loss_kind, engine):
    _, _, g = batch_gradients(config, params, np.asarray(image)[None], [label], loss_kind, engine)
    return g[0]


def grad_adjoint(config: ModelConfig, params: ModelParams, image, label: int, loss_kind: str) -> np.ndarray:
    return _single(config, params, image, label, loss_kind, "adjoint")


def grad_parameter_shift(config: ModelConfig, params: ModelParams, image, label: int,
                         loss_kind: str) -> np.ndarray:
    return _single(config, params, image, label, loss_kind, "parameter_shift")


def sample_loss(config: ModelConfig, params: ModelParams, image, label: int, loss_kind: str) -> float:
    tokens = tokens_for(config, params, np.asarray(image, dtype=float)[None])
    e = config.evaluator().expectation(params.theta(), encoding_inputs(config, tokens))[0]
    return float(loss_value(params.weight * e + params.bias, label, loss_kind))


def grad_finite_difference(config: ModelConfig, params: ModelParams, image, label: int, loss_kind: str,
                           h: float = 1e-5) -> np.ndarray:
    """Central differences over every trainable parameter (test oracle)."""
    if not h > 0:
        raise StructuralError("step h must be positive")
    base = params.to_vector()
    grad = np.zeros_like(base)
    for j in range(base.size):
        up, down = base.copy(), base.copy()
        up[j] += h
        down[j] -= h
        grad[j] = (sample_loss(config, params.with_vector(up), image, label, loss_kind)
                   - sample_loss(config, params.with_vector(down), image, label, loss_kind)) / (2 * h)
    return grad


# --------------------------------------------------------------------------- optimiser


def adam_step(params: np.ndarray, grads: np.ndarray, state: OptimizerState,
              lr: float) -> tuple[np.ndarray, OptimizerState]:
    params = np.asarray(params, dtype=float)
    grads = np.asarray(grads, dtype=float)
    if params.shape != grads.shape or state.m.shape != params.shape:
        raise StructuralError("parameter, gradient and optimiser state sizes differ")
    t = state.t + 1
    m = state.beta1 * state.m + (1 - state.beta1) * grads
    v = state.beta2 * state.v + (1 - state.beta2) * grads**2
    m_hat = m / (1 - state.beta1**t)
    v_hat = v / (1 - state.beta2**t)
    new = params - lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return new, OptimizerState(m, v, t, state.beta1, state.beta2, state.eps)


# --------------------------------------------------------------------------- loops


def evaluate(config: ModelConfig, params: ModelParams, dataset: Dataset,
             loss_kind: str = "l1") -> tuple[float, float]:
    """Mean loss and accuracy of sign(logit) (ties count as +1)."""
    if len(dataset) == 0:
        raise StructuralError("cannot evaluate on an empty dataset")
    tokens = tokens_for(config, params, dataset.images)
    e = config.evaluator().expectation(params.theta(), encoding_inputs(config, tokens))
    logits = params.weight * e + params.bias
    predictions = np.where(logits >= 0, 1, -1)
    losses = loss_value(logits, dataset.labels, loss_kind)
    return float(np.mean(losses)), float(np.mean(predictions == dataset.labels))


def train_model(config: ModelConfig, train_config: TrainConfig, train_set: Dataset, val_set: Dataset,
                initial_params: ModelParams,
                on_epoch: Callable[[Metrics, ModelParams], None] | None = None,
                ) -> tuple[ModelParams, list[Metrics]]:
    if len(train_set) == 0 or len(val_set) == 0:
        raise StructuralError("training and validation sets must be non-empty")
    rng = np.random.default_rng(train_config.seed)
    params = initial_params.copy()
    vector = params.to_vector()
    state = OptimizerState.zeros(vector.size)
    history: list[Metrics] = []
    n = len(train_set)
    for epoch in range(1, train_config.epochs + 1):
        order = rng.permutation(n)
        for start in range(0, n, train_config.batch_size):
            idx = order[start:start + train_config.batch_size]
            _, _, grads = batch_gradients(config, params, train_set.images[idx], train_set.labels[idx],
                                          train_config.loss_kind, train_config.gradient_engine)
            vector, state = adam_step(vector, grads.mean(axis=0), state, train_config.learning_rate)
            params = params.with_vector(vector)
        train_loss, train_acc = evaluate(config, params, train_set, train_config.loss_kind)
        val_loss, val_acc = evaluate(config, params, val_set, train_config.loss_kind)
        metrics = Metrics(epoch, train_loss, train_acc, val_loss, val_acc)
        history.append(metrics)
        if on_epoch is not None:
            on_epoch(metrics, params)
    return params, history
