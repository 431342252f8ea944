"""SASQuaTCh model: configuration, parameters, circuit assembly and forward pass."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import qsim
from .embed import PatchEmbedder, check_image, normalize_tokens, patch_array, register_qubits
from .errors import CapacityError, FormatError, StructuralError
from .evaluator import Evaluator, evaluator_for
from .qsim import Circuit, Gate, Slot

ENCODINGS = ("angle", "amplitude")


@dataclass(frozen=True)
class ModelConfig:
    encoding: str = "angle"
    num_patches: int = 4
    embed_dim: int = 4
    kernel_layers: int = 1
    depth: int = 1
    use_qft: bool = True
    use_perceptron: bool = True
    num_readout: int = 1
    patch_size: int = 2
    trainable_embedding: bool = True

    def __post_init__(self):
        if self.encoding not in ENCODINGS:
            raise StructuralError(f"encoding must be one of {ENCODINGS}")
        if self.num_patches < 1 or self.embed_dim < 1 or self.patch_size < 1:
            raise StructuralError("num_patches, embed_dim and patch_size must be >= 1")
        if self.kernel_layers < 0 or self.depth < 1:
            raise StructuralError("kernel_layers must be >= 0 and depth >= 1")
        if self.num_readout != 1:
            raise StructuralError("only binary classification with one readout qubit is supported")
        if self.encoding == "amplitude":
            register_qubits(self.embed_dim)

    @property
    def register_qubits(self) -> int:
        return self.embed_dim if self.encoding == "angle" else register_qubits(self.embed_dim)

    @property
    def data_qubits(self) -> int:
        return self.num_patches * self.register_qubits

    @property
    def num_qubits(self) -> int:
        return self.data_qubits + self.num_readout

    @property
    def readout_qubit(self) -> int:
        return self.data_qubits

    @property
    def num_kernel_params(self) -> int:
        return self.depth * self.kernel_layers * self.data_qubits * 3

    @property
    def num_perceptron_params(self) -> int:
        return 4 * self.data_qubits if self.use_perceptron else 0

    @property
    def num_inputs(self) -> int:
        """Encoding slots at the front of the circuit parameter vector."""
        return self.data_qubits if self.encoding == "angle" else 0

    def check_capacity(self) -> None:
        if self.num_qubits > qsim.MAX_QUBITS:
            raise CapacityError(
                f"configuration needs {self.num_qubits} qubits; the simulator supports {qsim.MAX_QUBITS}"
            )

    def evaluator(self) -> Evaluator:
        self.check_capacity()
        return evaluator_for(self.encoding, self.num_patches, self.register_qubits,
                             self.kernel_layers, self.depth, self.use_qft, self.use_perceptron)


@dataclass
class ModelParams:
    kernel_angles: np.ndarray  # (depth, layers, q, 3): alpha, beta, gamma
    perceptron_angles: np.ndarray  # (4 q,)
    weight: float
    bias: float
    embedder: PatchEmbedder

    def __post_init__(self):
        self.kernel_angles = np.asarray(self.kernel_angles, dtype=float)
        self.perceptron_angles = np.asarray(self.perceptron_angles, dtype=float).reshape(-1)
        self.weight = float(self.weight)
        self.bias = float(self.bias)

    def theta(self) -> np.ndarray:
        """Circuit angles in evaluator order (kernel, then perceptron)."""
        return np.concatenate([self.kernel_angles.reshape(-1), self.perceptron_angles])

    def to_vector(self) -> np.ndarray:
        parts = [self.theta(), [self.weight, self.bias]]
        if self.embedder.trainable:
            parts += [self.embedder.projection.reshape(-1), self.embedder.positional.reshape(-1)]
        return np.concatenate(parts)

    def with_vector(self, vector) -> ModelParams:
        vector = np.asarray(vector, dtype=float)
        if vector.shape != (self.num_trainable,):
            raise StructuralError(f"expected {self.num_trainable} parameters, got {vector.shape}")
        nk, npc = self.kernel_angles.size, self.perceptron_angles.size
        pos = nk + npc
        embedder = self.embedder.copy()
        if embedder.trainable:
            n_proj = embedder.projection.size
            embedder.projection = vector[pos + 2:pos + 2 + n_proj].reshape(embedder.projection.shape).copy()
            embedder.positional = vector[pos + 2 + n_proj:].reshape(embedder.positional.shape).copy()
        return ModelParams(
            vector[:nk].reshape(self.kernel_angles.shape).copy(),
            vector[nk:pos].copy(),
            vector[pos],
            vector[pos + 1],
            embedder,
        )

    @property
    def num_trainable(self) -> int:
        n = self.kernel_angles.size + self.perceptron_angles.size + 2
        return n + (self.embedder.num_params if self.embedder.trainable else 0)

    def copy(self) -> ModelParams:
        return ModelParams(self.kernel_angles.copy(), self.perceptron_angles.copy(), self.weight,
                           self.bias, self.embedder.copy())


def init_params(config: ModelConfig, seed: int | np.random.Generator | None = None,
                image_shape: tuple[int, int] | None = None) -> ModelParams:
    """Angles uniform on [0, 2 pi), head w=1, b=0, fresh patch embedder."""
    rng = np.random.default_rng(seed)
    q = config.data_qubits
    kernel = rng.uniform(0.0, 2 * np.pi, size=(config.depth, config.kernel_layers, q, 3))
    perceptron = rng.uniform(0.0, 2 * np.pi, size=config.num_perceptron_params)
    if image_shape is not None:
        gh = -(-image_shape[0] // config.patch_size)
        gw = -(-image_shape[1] // config.patch_size)
        if gh * gw != config.num_patches:
            raise StructuralError(
                f"{image_shape} images with patch size {config.patch_size} give {gh * gw} patches, "
                f"config says {config.num_patches}"
            )
    embedder = PatchEmbedder.initialize(config.patch_size, config.embed_dim, config.num_patches,
                                        rng, trainable=config.trainable_embedding)
    return ModelParams(kernel, perceptron, 1.0, 0.0, embedder)


def parameter_count(config: ModelConfig) -> dict[str, int]:
    census = {
        "kernel": config.num_kernel_params,
        "perceptron": config.num_perceptron_params,
        "head": 2,
        "embedding": (config.patch_size**2 * config.embed_dim + config.num_patches * config.embed_dim)
        if config.trainable_embedding else 0,
    }
    census["total"] = sum(census.values())
    return census


# --------------------------------------------------------------------------- circuits


def build_kernel_layer(q_data: int, slot_offset: int = 0, num_qubits: int | None = None) -> Circuit:
    """RotZYZ on every data qubit, then the CNOT ring 0->1->...->q-1->0."""
    if q_data < 1:
        raise StructuralError("kernel layer needs at least one data qubit")
    num_qubits = q_data if num_qubits is None else num_qubits
    gates = [
        Gate("RotZYZ", (i,), angles=tuple(Slot(slot_offset + 3 * i + k) for k in range(3)))
        for i in range(q_data)
    ]
    if q_data >= 2:
        gates += [Gate("CNOT", (i + 1,), (i,)) for i in range(q_data - 1)]
        gates.append(Gate("CNOT", (0,), (q_data - 1,)))
    return Circuit(num_qubits, gates, slot_offset + 3 * q_data)


def build_perceptron(q_data: int, readout: int, slot_offset: int = 0,
                     num_qubits: int | None = None) -> Circuit:
    """Per data qubit i: CRX(i -> r), RX(r), CRZ(i -> r), RZ(r)."""
    if 0 <= readout < q_data:
        raise StructuralError(f"readout qubit {readout} collides with a data qubit")
    num_qubits = max(q_data, readout) + 1 if num_qubits is None else num_qubits
    gates = []
    for i in range(q_data):
        s = slot_offset + 4 * i
        gates += [
            Gate("CRX", (readout,), (i,), (Slot(s),)),
            Gate("RX", (readout,), angles=(Slot(s + 1),)),
            Gate("CRZ", (readout,), (i,), (Slot(s + 2),)),
            Gate("RZ", (readout,), angles=(Slot(s + 3),)),
        ]
    return Circuit(num_qubits, gates, slot_offset + 4 * q_data)


def build_circuit(config: ModelConfig) -> Circuit:
    """Full gate program on data + readout qubits.

    Parameter layout: encoding angles (angle encoding only), kernel angles,
    perceptron angles.  Amplitude-encoded runs start from an injected state.
    """
    config.check_capacity()
    q, b, n_total = config.data_qubits, config.register_qubits, config.num_qubits
    gates: list[Gate] = []
    if config.encoding == "angle":
        gates += [Gate("RY", (i,), angles=(Slot(i),)) for i in range(q)]
    offset = config.num_inputs
    for _ in range(config.depth):
        if config.use_qft:
            for s in range(config.num_patches):
                gates += qsim.qft_gates(range(s * b, (s + 1) * b))
        for _ in range(config.kernel_layers):
            gates += build_kernel_layer(q, offset, n_total).gates
            offset += 3 * q
        if config.use_qft:
            for s in range(config.num_patches):
                gates += qsim.qft_gates(range(s * b, (s + 1) * b), inverse=True)
    gates.append(Gate("H", (config.readout_qubit,)))
    if config.use_perceptron:
        gates += build_perceptron(q, config.readout_qubit, offset, n_total).gates
        offset += 4 * q
    return Circuit(n_total, gates, offset)


# --------------------------------------------------------------------------- forward


def tokens_for(config: ModelConfig, params: ModelParams, images: np.ndarray) -> np.ndarray:
    """Classical patch + position embedding for a batch, shape (B, N, embed_dim)."""
    patches = patch_array(images, config.patch_size)
    if patches.shape[1] != config.num_patches:
        raise StructuralError(
            f"images give {patches.shape[1]} patches, config expects {config.num_patches}"
        )
    return patches @ params.embedder.projection + params.embedder.positional


def encoding_inputs(config: ModelConfig, tokens: np.ndarray) -> np.ndarray:
    """Evaluator inputs: rotation angles, or unit-norm amplitude vectors."""
    if config.encoding == "angle":
        return tokens.reshape(tokens.shape[0], -1)
    unit, _ = normalize_tokens(tokens)
    return unit.reshape(tokens.shape[0], -1)


def expectations(config: ModelConfig, params: ModelParams, images) -> np.ndarray:
    images = np.asarray(images, dtype=float)
    tokens = tokens_for(config, params, images)
    return config.evaluator().expectation(params.theta(), encoding_inputs(config, tokens))


def forward(config: ModelConfig, params: ModelParams, image) -> tuple[float, float]:
    img = check_image(image)
    e = float(expectations(config, params, img[None])[0])
    return e, params.weight * e + params.bias


def forward_reference(config: ModelConfig, params: ModelParams, image) -> float:
    """<Z_readout> through the generic gate-by-gate simulator (slow oracle)."""
    img = check_image(image)
    tokens = tokens_for(config, params, img[None])[0]
    circuit = build_circuit(config)
    readout_zero = np.array([1.0, 0.0], dtype=complex)
    if config.encoding == "angle":
        vector = np.concatenate([tokens.reshape(-1), params.theta()])
        data = np.zeros(2**config.data_qubits, dtype=complex)
        data[0] = 1.0
    else:
        vector = params.theta()
        unit, _ = normalize_tokens(tokens)
        data = np.ones(1, dtype=complex)
        for row in unit:
            data = np.kron(data, row)
    state = qsim.QuantumState(config.num_qubits, np.kron(data, readout_zero))
    final = qsim.run_circuit(circuit, vector, state)
    return qsim.expectation_z(final, config.readout_qubit)


def predict(logit: float) -> int:
    return 1 if logit >= 0 else -1


# --------------------------------------------------------------------------- checkpoints

CHECKPOINT_FORMAT = "sasquatch-checkpoint/1"


def _encode_array(a: np.ndarray) -> dict:
    a = np.asarray(a, dtype=float)
    return {"shape": list(a.shape), "values": " ".join(format(float(v), ".17g") for v in a.reshape(-1))}


def _decode_array(obj: dict) -> np.ndarray:
    try:
        shape = tuple(int(s) for s in obj["shape"])
        text = obj["values"].split()
        values = np.array([float(v) for v in text], dtype=float)
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"malformed array entry: {exc}") from exc
    if values.size != math.prod(shape):
        raise FormatError(f"array has {values.size} values for shape {shape}")
    return values.reshape(shape)


def checkpoint_text(config: ModelConfig, params: ModelParams) -> str:
    doc = {
        "format": CHECKPOINT_FORMAT,
        "config": asdict(config),
        "params": {
            "kernel_angles": _encode_array(params.kernel_angles),
            "perceptron_angles": _encode_array(params.perceptron_angles),
            "weight": format(params.weight, ".17g"),
            "bias": format(params.bias, ".17g"),
            "projection": _encode_array(params.embedder.projection),
            "positional": _encode_array(params.embedder.positional),
            "embedding_trainable": params.embedder.trainable,
        },
    }
    return json.dumps(doc, indent=2) + "\n"


def parse_checkpoint(text: str) -> tuple[ModelConfig, ModelParams]:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(f"checkpoint is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("format") != CHECKPOINT_FORMAT:
        raise FormatError("not a sasquatch checkpoint")
    try:
        known = {f.name for f in fields(ModelConfig)}
        cfg = doc["config"]
        if set(cfg) != known:
            raise FormatError(f"checkpoint config fields {sorted(cfg)} do not match {sorted(known)}")
        config = ModelConfig(**cfg)
        p = doc["params"]
        projection = _decode_array(p["projection"])
        positional = _decode_array(p["positional"])
        embedder = PatchEmbedder(config.patch_size, config.embed_dim, projection, positional,
                                 bool(p["embedding_trainable"]))
        params = ModelParams(_decode_array(p["kernel_angles"]), _decode_array(p["perceptron_angles"]),
                             float(p["weight"]), float(p["bias"]), embedder)
    except FormatError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"malformed checkpoint: {exc}") from exc
    check_consistent(config, params)
    return config, params


def check_consistent(config: ModelConfig, params: ModelParams) -> None:
    q = config.data_qubits
    expected = {
        "kernel_angles": (config.depth, config.kernel_layers, q, 3),
        "perceptron_angles": (config.num_perceptron_params,),
        "positional": (config.num_patches, config.embed_dim),
    }
    actual = {
        "kernel_angles": params.kernel_angles.shape,
        "perceptron_angles": params.perceptron_angles.shape,
        "positional": params.embedder.positional.shape,
    }
    for key, shape in expected.items():
        if tuple(actual[key]) != shape:
            raise FormatError(f"{key} has shape {actual[key]}, config requires {shape}")


def save_checkpoint(path, config: ModelConfig, params: ModelParams) -> None:
    Path(path).write_text(checkpoint_text(config, params))


def load_checkpoint(path) -> tuple[ModelConfig, ModelParams]:
    return parse_checkpoint(Path(path).read_text())
