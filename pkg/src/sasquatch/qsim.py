"""Exact statevector simulation.

Qubit 0 is the most significant bit of the basis index, so a contiguous block
of qubits maps onto one axis of the amplitude tensor and the per-block QFT is
the ordinary DFT of that axis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence, Union

import numpy as np

from .errors import CapacityError, StructuralError

MAX_QUBITS = 24
ORACLE_MAX_QUBITS = 10

#: number of angle slots consumed by each gate kind
GATE_SLOTS = {
    "H": 0,
    "CNOT": 0,
    "SWAP": 0,
    "RX": 1,
    "RY": 1,
    "RZ": 1,
    "CRX": 1,
    "CRZ": 1,
    "CPhase": 1,
    "RotZYZ": 3,
}
_NUM_TARGETS = {"SWAP": 2}
_NUM_CONTROLS = {"CNOT": 1, "CRX": 1, "CRZ": 1, "CPhase": 1}

PAULI_X = np.array([[0, 1], [1, 0]], dtype=complex)
PAULI_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
PAULI_Z = np.array([[1, 0], [0, -1]], dtype=complex)
HADAMARD = np.array([[1, 1], [1, -1]], dtype=complex) / math.sqrt(2.0)


@dataclass(frozen=True)
class Slot:
    """Reference to entry ``index`` of a circuit's parameter vector."""

    index: int


Angle = Union[float, Slot]


@dataclass
class QuantumState:
    num_qubits: int
    amplitudes: np.ndarray

    def __post_init__(self):
        self.amplitudes = np.asarray(self.amplitudes, dtype=np.complex128)
        if self.amplitudes.shape != (2**self.num_qubits,):
            raise StructuralError(
                f"expected {2**self.num_qubits} amplitudes, got shape {self.amplitudes.shape}"
            )

    def copy(self) -> QuantumState:
        return QuantumState(self.num_qubits, self.amplitudes.copy())

    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def probabilities(self) -> np.ndarray:
        return np.abs(self.amplitudes) ** 2


@dataclass(frozen=True)
class Gate:
    kind: str
    targets: tuple[int, ...]
    controls: tuple[int, ...] = ()
    angles: tuple[Angle, ...] = ()

    def __post_init__(self):
        if self.kind not in GATE_SLOTS:
            raise StructuralError(f"unknown gate kind {self.kind!r}")
        object.__setattr__(self, "targets", tuple(int(t) for t in self.targets))
        object.__setattr__(self, "controls", tuple(int(c) for c in self.controls))
        object.__setattr__(self, "angles", tuple(self.angles))
        if len(self.targets) != _NUM_TARGETS.get(self.kind, 1):
            raise StructuralError(f"{self.kind} takes {_NUM_TARGETS.get(self.kind, 1)} target(s)")
        if len(self.controls) != _NUM_CONTROLS.get(self.kind, 0):
            raise StructuralError(f"{self.kind} takes {_NUM_CONTROLS.get(self.kind, 0)} control(s)")
        if len(self.angles) != GATE_SLOTS[self.kind]:
            raise StructuralError(f"{self.kind} consumes exactly {GATE_SLOTS[self.kind]} angle slot(s)")
        wires = self.targets + self.controls
        if len(set(wires)) != len(wires):
            raise StructuralError(f"{self.kind}: targets and controls must be disjoint")

    @property
    def wires(self) -> tuple[int, ...]:
        return self.controls + self.targets

    def slot_indices(self) -> list[int]:
        return [a.index for a in self.angles if isinstance(a, Slot)]

    def resolve(self, params: Sequence[float] | None) -> tuple[float, ...]:
        out = []
        for a in self.angles:
            if isinstance(a, Slot):
                if params is None or not 0 <= a.index < len(params):
                    raise StructuralError(f"parameter slot {a.index} not supplied")
                out.append(float(params[a.index]))
            else:
                out.append(float(a))
        return tuple(out)


@dataclass(frozen=True)
class Circuit:
    num_qubits: int
    gates: tuple[Gate, ...] = field(default_factory=tuple)
    num_params: int = 0

    def __post_init__(self):
        object.__setattr__(self, "gates", tuple(self.gates))
        if self.num_qubits < 1:
            raise StructuralError("a circuit needs at least one qubit")
        for g in self.gates:
            _check_wires(g, self.num_qubits)
            for idx in g.slot_indices():
                if not 0 <= idx < self.num_params:
                    raise StructuralError(
                        f"{g.kind} references parameter {idx} but circuit has {self.num_params}"
                    )

    def __add__(self, other: Circuit) -> Circuit:
        if other.num_qubits != self.num_qubits:
            raise StructuralError("cannot concatenate circuits of different width")
        return Circuit(self.num_qubits, self.gates + other.gates, max(self.num_params, other.num_params))

    def __len__(self) -> int:
        return len(self.gates)


def _check_wires(gate: Gate, num_qubits: int) -> None:
    for w in gate.wires:
        if not 0 <= w < num_qubits:
            raise StructuralError(f"{gate.kind} acts on qubit {w}, register has {num_qubits}")


# --------------------------------------------------------------------------
# gate matrices


def rx(theta: float) -> np.ndarray:
    c, s = math.cos(theta / 2), math.sin(theta / 2)
    return np.array([[c, -1j * s], [-1j * s, c]], dtype=complex)


def ry(theta: float) -> np.ndarray:
    c, s = math.cos(theta / 2), math.sin(theta / 2)
    return np.array([[c, -s], [s, c]], dtype=complex)


def rz(theta: float) -> np.ndarray:
    return np.array([[np.exp(-0.5j * theta), 0], [0, np.exp(0.5j * theta)]], dtype=complex)


def rot_zyz(alpha: float, beta: float, gamma: float) -> np.ndarray:
    """RZ(alpha) @ RY(beta) @ RZ(gamma); gamma acts first."""
    return rz(alpha) @ ry(beta) @ rz(gamma)


def phase(phi: float) -> np.ndarray:
    return np.array([[1, 0], [0, np.exp(1j * phi)]], dtype=complex)


def target_matrix(kind: str, angles: Sequence[float]) -> np.ndarray:
    """Matrix acting on the target(s) when all controls are 1."""
    if kind == "H":
        return HADAMARD
    if kind == "CNOT":
        return PAULI_X
    if kind == "SWAP":
        return np.array([[1, 0, 0, 0], [0, 0, 1, 0], [0, 1, 0, 0], [0, 0, 0, 1]], dtype=complex)
    if kind in ("RX", "CRX"):
        return rx(angles[0])
    if kind == "RY":
        return ry(angles[0])
    if kind in ("RZ", "CRZ"):
        return rz(angles[0])
    if kind == "CPhase":
        return phase(angles[0])
    if kind == "RotZYZ":
        return rot_zyz(*angles)
    raise StructuralError(f"unknown gate kind {kind!r}")


# --------------------------------------------------------------------------
# statevector kernels (operate in place on a (2,)*n tensor)


def _apply_1q(tensor: np.ndarray, matrix: np.ndarray, target: int, controls: Iterable[int] = ()) -> None:
    n = tensor.ndim
    controls = tuple(controls)
    idx: list = [slice(None)] * n
    for c in controls:
        idx[c] = 1
    sub = tensor[tuple(idx)]
    ax = target - sum(1 for c in controls if c < target)
    s0: list = [slice(None)] * sub.ndim
    s1: list = [slice(None)] * sub.ndim
    s0[ax], s1[ax] = 0, 1
    s0, s1 = tuple(s0), tuple(s1)
    x0 = sub[s0].copy()
    x1 = sub[s1].copy()
    sub[s0] = matrix[0, 0] * x0 + matrix[0, 1] * x1
    sub[s1] = matrix[1, 0] * x0 + matrix[1, 1] * x1


def _apply_gate_tensor(tensor: np.ndarray, gate: Gate, angles: Sequence[float]) -> np.ndarray:
    if gate.kind == "SWAP":
        a, b = gate.targets
        return np.ascontiguousarray(np.swapaxes(tensor, a, b))
    _apply_1q(tensor, target_matrix(gate.kind, angles), gate.targets[0], gate.controls)
    return tensor


def init_state(num_qubits: int) -> QuantumState:
    if not 1 <= num_qubits <= MAX_QUBITS:
        raise CapacityError(f"num_qubits must be in [1, {MAX_QUBITS}], got {num_qubits}")
    amps = np.zeros(2**num_qubits, dtype=np.complex128)
    amps[0] = 1.0
    return QuantumState(num_qubits, amps)


def apply_gate(state: QuantumState, gate: Gate, params: Sequence[float] | None = None) -> QuantumState:
    _check_wires(gate, state.num_qubits)
    n = state.num_qubits
    tensor = state.amplitudes.reshape((2,) * n).copy()
    tensor = _apply_gate_tensor(tensor, gate, gate.resolve(params))
    return QuantumState(n, tensor.reshape(-1))


def run_circuit(
    circuit: Circuit, params: Sequence[float] | None = None, state: QuantumState | None = None
) -> QuantumState:
    n = circuit.num_qubits
    if state is None:
        state = init_state(n)
    elif state.num_qubits != n:
        raise StructuralError(f"state has {state.num_qubits} qubits, circuit has {n}")
    if circuit.num_params and (params is None or len(params) < circuit.num_params):
        raise StructuralError(f"circuit needs {circuit.num_params} parameters")
    tensor = state.amplitudes.reshape((2,) * n).copy()
    for g in circuit.gates:
        tensor = _apply_gate_tensor(tensor, g, g.resolve(params))
    return QuantumState(n, tensor.reshape(-1))


def _block_bounds(num_qubits: int, qubit_block) -> tuple[int, int]:
    block = range(*qubit_block) if isinstance(qubit_block, tuple) else qubit_block
    block = list(block)
    if not block:
        raise StructuralError("QFT block is empty")
    start, stop = block[0], block[-1] + 1
    if block != list(range(start, stop)):
        raise StructuralError("QFT block must be a contiguous ascending range of qubits")
    if start < 0 or stop > num_qubits:
        raise StructuralError(f"QFT block {start}..{stop - 1} outside register of {num_qubits}")
    return start, stop


def qft_register(state: QuantumState, qubit_block) -> QuantumState:
    """Unitary DFT (``exp(+2 pi i jk / M) / sqrt(M)``) on a contiguous qubit block."""
    return _dft_block(state, qubit_block, inverse=False)


def iqft_register(state: QuantumState, qubit_block) -> QuantumState:
    return _dft_block(state, qubit_block, inverse=True)


def _dft_block(state: QuantumState, qubit_block, inverse: bool) -> QuantumState:
    start, stop = _block_bounds(state.num_qubits, qubit_block)
    n = state.num_qubits
    view = state.amplitudes.reshape(2**start, 2 ** (stop - start), 2 ** (n - stop))
    # numpy's ifft carries the +i sign convention of the forward QFT
    out = np.fft.fft(view, axis=1, norm="ortho") if inverse else np.fft.ifft(view, axis=1, norm="ortho")
    return QuantumState(n, out.reshape(-1))


def qft_gates(qubit_block, inverse: bool = False) -> list[Gate]:
    """Exact Hadamard / controlled-phase / swap network for the block QFT."""
    block = list(range(*qubit_block)) if isinstance(qubit_block, tuple) else list(qubit_block)
    if not block:
        raise StructuralError("QFT block is empty")
    gates: list[Gate] = []
    b = len(block)
    for j in range(b):
        gates.append(Gate("H", (block[j],)))
        for m in range(j + 1, b):
            gates.append(Gate("CPhase", (block[j],), (block[m],), (math.pi / 2 ** (m - j),)))
    for j in range(b // 2):
        gates.append(Gate("SWAP", (block[j], block[b - 1 - j])))
    if inverse:
        gates = [
            Gate(g.kind, g.targets, g.controls, tuple(-a for a in g.angles)) for g in reversed(gates)
        ]
    return gates


def expectation_z(state: QuantumState, qubit: int) -> float:
    n = state.num_qubits
    if not 0 <= qubit < n:
        raise StructuralError(f"qubit {qubit} outside register of {n}")
    probs = (np.abs(state.amplitudes) ** 2).reshape(2**qubit, 2, 2 ** (n - qubit - 1))
    return float(probs[:, 0, :].sum() - probs[:, 1, :].sum())


# --------------------------------------------------------------------------
# dense oracle


def _embed_operator(ops: dict[int, np.ndarray], n: int) -> np.ndarray:
    out = np.ones((1, 1), dtype=complex)
    for q in range(n):
        out = np.kron(out, ops.get(q, np.eye(2, dtype=complex)))
    return out


def gate_unitary(gate: Gate, num_qubits: int, params: Sequence[float] | None = None) -> np.ndarray:
    """Full 2^n x 2^n matrix of a gate, built from explicit Kronecker products."""
    _check_wires(gate, num_qubits)
    angles = gate.resolve(params)
    if gate.kind == "SWAP":
        a, b = gate.targets
        total = np.zeros((2**num_qubits,) * 2, dtype=complex)
        for p in (np.eye(2, dtype=complex), PAULI_X, PAULI_Y, PAULI_Z):
            total += _embed_operator({a: p, b: p}, num_qubits)
        return total / 2
    m = target_matrix(gate.kind, angles)
    t = gate.targets[0]
    if not gate.controls:
        return _embed_operator({t: m}, num_qubits)
    (c,) = gate.controls
    p0 = np.diag([1.0, 0.0]).astype(complex)
    p1 = np.diag([0.0, 1.0]).astype(complex)
    return _embed_operator({c: p0}, num_qubits) + _embed_operator({c: p1, t: m}, num_qubits)


def dense_unitary_oracle(circuit: Circuit, params: Sequence[float] | None = None) -> np.ndarray:
    """Explicit circuit unitary; test oracle only."""
    n = circuit.num_qubits
    if n > ORACLE_MAX_QUBITS:
        raise CapacityError(f"dense oracle limited to {ORACLE_MAX_QUBITS} qubits, got {n}")
    u = np.eye(2**n, dtype=complex)
    for g in circuit.gates:
        u = gate_unitary(g, n, params) @ u
    return u


# --------------------------------------------------------------------------
# reverse-mode differentiation of <Z_qubit>


def _pauli_inner(bra: np.ndarray, ket: np.ndarray, pauli: np.ndarray, target: int,
                 controls: Sequence[int] = ()) -> complex:
    """<bra| (P_1 on controls) (pauli on target) |ket> for (2,)*n tensors."""
    tmp = ket.copy()
    for c in controls:
        idx: list = [slice(None)] * tmp.ndim
        idx[c] = 0
        tmp[tuple(idx)] = 0
    _apply_1q(tmp, pauli, target)
    return complex(np.vdot(bra.reshape(-1), tmp.reshape(-1)))


def adjoint_gradient(
    circuit: Circuit,
    params: Sequence[float],
    qubit: int,
    state: QuantumState | None = None,
) -> tuple[float, np.ndarray]:
    """Value and parameter gradient of ``<Z_qubit>`` by one reverse sweep.

    Each parametrised gate is ``exp(-i t G / 2)`` (or a controlled/phase
    variant), so its derivative is a Pauli insertion evaluated between the
    forward state and the back-propagated observable state.
    """
    final = run_circuit(circuit, params, state)
    n = circuit.num_qubits
    value = expectation_z(final, qubit)
    chi = final.amplitudes.reshape((2,) * n).copy()
    lam = chi.copy()
    _apply_1q(lam, PAULI_Z, qubit)
    grad = np.zeros(circuit.num_params)

    for g in reversed(circuit.gates):
        angles = g.resolve(params)
        if g.angles:
            _accumulate_gate_grad(g, angles, chi, lam, grad)
        inv = _inverse(g, angles)
        chi = _apply_gate_tensor(chi, g, inv) if g.kind != "RotZYZ" else _undo_rot(chi, g, angles)
        lam = _apply_gate_tensor(lam, g, inv) if g.kind != "RotZYZ" else _undo_rot(lam, g, angles)
    return value, grad


def _inverse(g: Gate, angles: Sequence[float]) -> tuple[float, ...]:
    return tuple(-a for a in angles)


def _undo_rot(tensor: np.ndarray, g: Gate, angles: Sequence[float]) -> np.ndarray:
    _apply_1q(tensor, rot_zyz(*angles).conj().T, g.targets[0])
    return tensor


def _accumulate_gate_grad(g: Gate, angles, chi, lam, grad) -> None:
    t = g.targets[0]
    if g.kind in ("RX", "RY", "RZ", "CRX", "CRZ"):
        pauli = {"X": PAULI_X, "Y": PAULI_Y, "Z": PAULI_Z}[g.kind[-1]]
        d = _pauli_inner(lam, chi, pauli, t, g.controls).imag
        _add(grad, g.angles[0], d)
    elif g.kind == "CPhase":
        # d/dphi diag(1, e^{i phi}) = i |1><1|, so grad = -2 Im <lam|P11|chi>
        proj = np.diag([0.0, 1.0]).astype(complex)
        d = -2.0 * _pauli_inner(lam, chi, proj, t, g.controls).imag
        _add(grad, g.angles[0], d)
    elif g.kind == "RotZYZ":
        alpha, beta, _ = angles
        chi_k, lam_k = chi.copy(), lam.copy()
        _add(grad, g.angles[0], _pauli_inner(lam_k, chi_k, PAULI_Z, t).imag)
        for tensor in (chi_k, lam_k):
            _apply_1q(tensor, rz(-alpha), t)
        _add(grad, g.angles[1], _pauli_inner(lam_k, chi_k, PAULI_Y, t).imag)
        for tensor in (chi_k, lam_k):
            _apply_1q(tensor, ry(-beta), t)
        _add(grad, g.angles[2], _pauli_inner(lam_k, chi_k, PAULI_Z, t).imag)


def _add(grad: np.ndarray, angle: Angle, value: float) -> None:
    if isinstance(angle, Slot):
        grad[angle.index] += value
