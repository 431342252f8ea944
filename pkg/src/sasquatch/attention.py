"""Classical attention references.

Scaled dot-product self-attention, its multi-head form, and attention as a
circular convolution against a stationary matrix-valued kernel, evaluated
either directly or through the convolution theorem.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import NumericalConsistencyError, StructuralError

IMAG_RESIDUE_TOL = 1e-8


@dataclass
class AttentionWeights:
    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray

    def __post_init__(self):
        self.w_q, self.w_k, self.w_v = (np.asarray(m, dtype=float) for m in (self.w_q, self.w_k, self.w_v))
        d = self.w_q.shape[0]
        for m in (self.w_q, self.w_k, self.w_v):
            if m.shape != (d, d):
                raise StructuralError("query/key/value matrices must all be d x d")

    @property
    def dim(self) -> int:
        return self.w_q.shape[0]

    @property
    def scale(self) -> float:
        return 1.0 / math.sqrt(self.dim)


@dataclass
class StationaryKernel:
    taps: np.ndarray  # (N, d, d); taps[t] multiplies x_{s'} where s - s' = t (mod N)

    def __post_init__(self):
        self.taps = np.asarray(self.taps, dtype=float)
        if self.taps.ndim != 3 or self.taps.shape[1] != self.taps.shape[2]:
            raise StructuralError("kernel taps must have shape (N, d, d)")

    @property
    def length(self) -> int:
        return self.taps.shape[0]

    @property
    def dim(self) -> int:
        return self.taps.shape[1]


def softmax(z, axis: int = -1) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    if z.size == 0:
        raise StructuralError("softmax of an empty vector")
    shifted = z - z.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def _check_sequence(x, d: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[1] != d:
        raise StructuralError(f"expected an N x {d} sequence, got shape {x.shape}")
    return x


def attention_scores(x, weights: AttentionWeights) -> np.ndarray:
    """Pre-softmax scores <W_q x_s, W_k x_j> / sqrt(d)."""
    x = _check_sequence(x, weights.dim)
    q = x @ weights.w_q.T
    k = x @ weights.w_k.T
    return (q @ k.T) * weights.scale


def attention_coefficients(x, weights: AttentionWeights) -> np.ndarray:
    return softmax(attention_scores(x, weights), axis=1)


def attend(coefficients: np.ndarray, x, weights: AttentionWeights) -> np.ndarray:
    """y_s = sum_j a_{s,j} W_v x_j for a given coefficient matrix."""
    x = _check_sequence(x, weights.dim)
    return coefficients @ (x @ weights.w_v.T)


def self_attention(x, weights: AttentionWeights) -> np.ndarray:
    return attend(attention_coefficients(x, weights), x, weights)


def multi_head_attention(x, heads: Sequence[AttentionWeights], w_o) -> np.ndarray:
    if not heads:
        raise StructuralError("multi-head attention needs at least one head")
    d = heads[0].dim
    if any(h.dim != d for h in heads):
        raise StructuralError("all heads must share the model dimension")
    w_o = np.asarray(w_o, dtype=float)
    if w_o.shape != (len(heads) * d, d):
        raise StructuralError(f"W_o must be {(len(heads) * d, d)}, got {w_o.shape}")
    concat = np.concatenate([self_attention(x, h) for h in heads], axis=1)
    return concat @ w_o


def kernel_attention_direct(x, kernel: StationaryKernel) -> np.ndarray:
    x = _check_sequence(x, kernel.dim)
    n = kernel.length
    if x.shape[0] != n:
        raise StructuralError(f"kernel has {n} taps but sequence has {x.shape[0]} tokens")
    # out[s] = sum_{s'} taps[(s - s') % N] @ x[s']
    shift = (np.arange(n)[:, None] - np.arange(n)[None, :]) % n
    return np.einsum("stij,tj->si", kernel.taps[shift], x)


def kernel_attention_fft(x, kernel: StationaryKernel) -> np.ndarray:
    x = _check_sequence(x, kernel.dim)
    n = kernel.length
    if x.shape[0] != n:
        raise StructuralError(f"kernel has {n} taps but sequence has {x.shape[0]} tokens")
    k_hat = np.fft.fft(kernel.taps, axis=0)
    x_hat = np.fft.fft(x, axis=0)
    y = np.fft.ifft(np.einsum("fij,fj->fi", k_hat, x_hat), axis=0)
    residue = np.abs(y.imag).max(initial=0.0)
    if residue > IMAG_RESIDUE_TOL:
        raise NumericalConsistencyError(f"imaginary residue {residue:.3g} in real convolution")
    return y.real
