from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from sasquatch import qsim
from sasquatch.embed import (
    PatchEmbedder,
    PatchSequence,
    amplitude_encode,
    angle_encode,
    extract_patches,
    pad_to_multiple,
    patch_array,
    project_patches,
    register_qubits,
    tensor_product,
)
from sasquatch.errors import CapacityError, DegenerateInputError, StructuralError


def test_extract_patches_4x4():
    img = np.arange(16).reshape(4, 4) / 16
    patches = extract_patches(img, 2)
    assert len(patches) == 4 and all(p.shape == (4,) for p in patches)
    assert np.array_equal(patches[0], img[:2, :2].reshape(-1))
    assert np.array_equal(patches[1], img[:2, 2:].reshape(-1))
    assert np.array_equal(patches[2], img[2:, :2].reshape(-1))


def test_extract_patches_mnist_shape_pads_to_32():
    img = np.random.default_rng(0).uniform(size=(28, 28))
    patches = extract_patches(img, 16)
    assert len(patches) == 4 and all(p.shape == (256,) for p in patches)
    # two rows/columns of padding on each side
    assert np.array_equal(patches[0].reshape(16, 16)[2:, 2:], img[:14, :14])
    assert np.all(patches[0].reshape(16, 16)[:2] == 0)


def test_single_patch_identity():
    img = np.array([[0.1, 0.2], [0.3, 0.4]])
    (patch,) = extract_patches(img, 2)
    assert np.array_equal(patch, img.reshape(-1))


def test_odd_padding_goes_bottom_right():
    padded = pad_to_multiple(np.ones((3, 3)), 2)
    assert padded.shape == (4, 4)
    assert padded[3].sum() == 0 and padded[:, 3].sum() == 0
    assert padded[:3, :3].sum() == 9


def test_patch_errors():
    with pytest.raises(StructuralError):
        extract_patches(np.zeros((4, 4)), 0)
    with pytest.raises(StructuralError):
        extract_patches(np.full((4, 4), 1.5), 2)


def test_embedder_initialization():
    emb = PatchEmbedder.initialize(2, 4, 4, rng=3)
    assert emb.projection.shape == (4, 4) and np.all(np.abs(emb.projection) <= 0.5)
    assert np.array_equal(emb.positional, np.zeros((4, 4)))
    assert emb.num_params == 32
    same = PatchEmbedder.initialize(2, 4, 4, rng=3)
    assert np.array_equal(emb.projection, same.projection)


def test_project_patches_examples():
    patches = np.random.default_rng(1).uniform(size=(4, 4))
    zero = PatchEmbedder(2, 4, np.zeros((4, 4)), np.zeros((4, 4)))
    assert np.array_equal(project_patches(patches, zero).tokens, np.zeros((4, 4)))
    ident = PatchEmbedder(2, 4, np.eye(4), np.zeros((4, 4)))
    assert np.array_equal(project_patches(patches, ident).tokens, patches)
    emb = PatchEmbedder.initialize(2, 4, 4, rng=5)
    emb.positional = np.random.default_rng(6).normal(size=(4, 4))
    expected = np.array([[sum(patches[s, k] * emb.projection[k, j] for k in range(4)) + emb.positional[s, j]
                          for j in range(4)] for s in range(4)])
    assert np.allclose(project_patches(patches, emb).tokens, expected, atol=1e-14)
    with pytest.raises(StructuralError):
        project_patches(np.zeros((3, 4)), emb)


def test_angle_encode_examples():
    circuit = angle_encode(PatchSequence(np.zeros((4, 4))))
    assert circuit.num_qubits == 16
    assert np.array_equal(qsim.run_circuit(circuit).amplitudes, qsim.init_state(16).amplitudes)
    flipped = qsim.run_circuit(angle_encode(PatchSequence([[math.pi]])))
    assert np.allclose(np.abs(flipped.amplitudes), [0, 1], atol=1e-15)
    assert np.allclose(flipped.amplitudes, qsim.ry(math.pi) @ [1, 0], atol=1e-15)
    with pytest.raises(CapacityError):
        angle_encode(PatchSequence(np.zeros((5, 5))))


def test_amplitude_encode_examples():
    states = amplitude_encode(PatchSequence([[1, 0, 0, 0], [1, 1, 1, 1]]))
    assert [s.num_qubits for s in states] == [2, 2]
    assert np.allclose(states[0].amplitudes, [1, 0, 0, 0])
    assert np.allclose(states[1].amplitudes, np.full(4, 0.5))
    full = tensor_product(amplitude_encode(PatchSequence(np.ones((4, 4)))))
    assert full.num_qubits == 8
    with pytest.raises(DegenerateInputError):
        amplitude_encode(PatchSequence([[0, 0, 0, 0]]))
    with pytest.raises(StructuralError):
        amplitude_encode(PatchSequence([[1, 2, 3]]))


def test_register_qubits():
    assert register_qubits(4) == 2 and register_qubits(8) == 3
    for bad in (1, 3, 6):
        with pytest.raises(StructuralError):
            register_qubits(bad)


def test_patch_sequence_rejects_nonfinite():
    with pytest.raises(StructuralError):
        PatchSequence([[np.nan]])


# ------------------------------------------------------------------ properties


@settings(max_examples=50, deadline=None)
@given(p=st.integers(1, 4), gh=st.integers(1, 4), gw=st.integers(1, 4), seed=st.integers(0, 10**6))
def test_patches_are_lossless(p, gh, gw, seed):
    img = np.random.default_rng(seed).uniform(size=(gh * p, gw * p))
    patches = patch_array(img[None], p)[0]
    rebuilt = patches.reshape(gh, gw, p, p).transpose(0, 2, 1, 3).reshape(gh * p, gw * p)
    assert np.array_equal(rebuilt, img)


@settings(max_examples=50, deadline=None)
@given(tokens=arrays(float, (3, 4), elements=st.floats(-10, 10)).filter(
    lambda t: np.all(np.linalg.norm(t, axis=1) > 1e-3)))
def test_amplitude_states_are_unit_norm(tokens):
    for state in amplitude_encode(PatchSequence(tokens)):
        assert state.norm() == pytest.approx(1.0, abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 10**6), a=st.floats(-3, 3), b=st.floats(-3, 3))
def test_projection_is_linear(seed, a, b):
    rng = np.random.default_rng(seed)
    emb = PatchEmbedder.initialize(2, 4, 4, rng=rng)
    u, v = rng.uniform(size=(2, 4, 4))
    lhs = project_patches(a * u + b * v, emb).tokens
    rhs = a * project_patches(u, emb).tokens + b * project_patches(v, emb).tokens
    assert np.allclose(lhs, rhs, atol=1e-10)
