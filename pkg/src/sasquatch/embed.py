"""Patch extraction, classical patch/position embedding and quantum encodings."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import CapacityError, DegenerateInputError, StructuralError
from .qsim import MAX_QUBITS, Circuit, Gate, QuantumState


@dataclass
class PatchSequence:
    tokens: np.ndarray  # (N, embed_dim)

    def __post_init__(self):
        self.tokens = np.asarray(self.tokens, dtype=float)
        if self.tokens.ndim != 2:
            raise StructuralError("tokens must be an N x embed_dim matrix")
        if not np.all(np.isfinite(self.tokens)):
            raise StructuralError("tokens must be finite")

    @property
    def num_patches(self) -> int:
        return self.tokens.shape[0]

    @property
    def embed_dim(self) -> int:
        return self.tokens.shape[1]


@dataclass
class PatchEmbedder:
    patch_size: int
    embed_dim: int
    projection: np.ndarray  # (patch_size**2, embed_dim)
    positional: np.ndarray  # (num_patches, embed_dim)
    trainable: bool = True

    def __post_init__(self):
        self.projection = np.asarray(self.projection, dtype=float)
        self.positional = np.asarray(self.positional, dtype=float)
        if self.projection.shape != (self.patch_size**2, self.embed_dim):
            raise StructuralError(
                f"projection must be {(self.patch_size**2, self.embed_dim)}, got {self.projection.shape}"
            )
        if self.positional.ndim != 2 or self.positional.shape[1] != self.embed_dim:
            raise StructuralError("positional must be num_patches x embed_dim")

    @classmethod
    def initialize(cls, patch_size: int, embed_dim: int, num_patches: int,
                   rng: np.random.Generator | int | None = None, trainable: bool = True) -> PatchEmbedder:
        """Uniform projection on +-1/sqrt(patch area); positional table starts at zero."""
        rng = np.random.default_rng(rng)
        bound = 1.0 / math.sqrt(patch_size**2)
        projection = rng.uniform(-bound, bound, size=(patch_size**2, embed_dim))
        positional = np.zeros((num_patches, embed_dim))
        return cls(patch_size, embed_dim, projection, positional, trainable)

    @property
    def num_patches(self) -> int:
        return self.positional.shape[0]

    @property
    def num_params(self) -> int:
        return self.projection.size + self.positional.size

    def copy(self) -> PatchEmbedder:
        return PatchEmbedder(self.patch_size, self.embed_dim, self.projection.copy(),
                             self.positional.copy(), self.trainable)


def check_image(image) -> np.ndarray:
    img = np.asarray(image, dtype=float)
    if img.ndim != 2:
        raise StructuralError("image must be a 2-D grayscale array")
    if img.size and (img.min() < 0.0 or img.max() > 1.0):
        raise StructuralError("pixel values must lie in [0, 1]")
    return img


def pad_to_multiple(image: np.ndarray, patch_size: int) -> np.ndarray:
    """Zero-pad symmetrically; odd padding puts the extra row/column bottom/right."""
    h, w = image.shape[-2:]
    ph = -h % patch_size
    pw = -w % patch_size
    widths = [(0, 0)] * (image.ndim - 2) + [(ph // 2, ph - ph // 2), (pw // 2, pw - pw // 2)]
    return np.pad(image, widths)


def patch_grid(height: int, width: int, patch_size: int) -> tuple[int, int]:
    return -(-height // patch_size), -(-width // patch_size)


def extract_patches(image, patch_size: int) -> list[np.ndarray]:
    if patch_size < 1:
        raise StructuralError("patch_size must be >= 1")
    img = check_image(image)
    return list(patch_array(img[None], patch_size)[0])


def patch_array(images: np.ndarray, patch_size: int) -> np.ndarray:
    """Batch form of :func:`extract_patches`: (B, H, W) -> (B, N, patch_size**2)."""
    if patch_size < 1:
        raise StructuralError("patch_size must be >= 1")
    imgs = pad_to_multiple(np.asarray(images, dtype=float), patch_size)
    b, h, w = imgs.shape
    gh, gw = h // patch_size, w // patch_size
    tiles = imgs.reshape(b, gh, patch_size, gw, patch_size).transpose(0, 1, 3, 2, 4)
    return tiles.reshape(b, gh * gw, patch_size * patch_size)


def project_patches(patches, embedder: PatchEmbedder) -> PatchSequence:
    arr = np.asarray(patches, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != embedder.patch_size**2:
        raise StructuralError(f"each patch must have length {embedder.patch_size**2}")
    if arr.shape[0] != embedder.num_patches:
        raise StructuralError(
            f"embedder expects {embedder.num_patches} patches, got {arr.shape[0]}"
        )
    return PatchSequence(arr @ embedder.projection + embedder.positional)


def angle_encode(tokens: PatchSequence) -> Circuit:
    """One qubit per token component, RY(value) acting on |0>."""
    values = tokens.tokens.reshape(-1)
    if values.size > MAX_QUBITS:
        raise CapacityError(f"angle encoding needs {values.size} qubits (limit {MAX_QUBITS})")
    gates = [Gate("RY", (i,), angles=(float(x),)) for i, x in enumerate(values)]
    return Circuit(values.size, gates)


def register_qubits(embed_dim: int) -> int:
    """Qubits per patch register under amplitude encoding."""
    if embed_dim < 2 or embed_dim & (embed_dim - 1):
        raise StructuralError(f"amplitude encoding needs a power-of-two embed_dim >= 2, got {embed_dim}")
    return embed_dim.bit_length() - 1


def normalize_tokens(tokens: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """L2-normalise along the last axis; returns (unit vectors, norms)."""
    norms = np.linalg.norm(tokens, axis=-1)
    if np.any(norms == 0.0) or not np.all(np.isfinite(norms)):
        raise DegenerateInputError("cannot amplitude-encode a zero-norm token")
    return tokens / norms[..., None], norms


def amplitude_encode(tokens: PatchSequence) -> list[QuantumState]:
    b = register_qubits(tokens.embed_dim)
    unit, _ = normalize_tokens(tokens.tokens)
    if b * tokens.num_patches > MAX_QUBITS:
        raise CapacityError("amplitude-encoded register exceeds simulator capacity")
    return [QuantumState(b, row.astype(complex)) for row in unit]


def tensor_product(states: list[QuantumState]) -> QuantumState:
    amps = np.ones(1, dtype=complex)
    for s in states:
        amps = np.kron(amps, s.amplitudes)
    return QuantumState(sum(s.num_qubits for s in states), amps)
