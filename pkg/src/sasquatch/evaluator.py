"""Batched evaluation and reverse-mode gradients of the SASQuaTCh expectation.

The generic simulator in :mod:`sasquatch.qsim` runs the whole (data + readout)
register gate by gate.  This module computes exactly the same quantity but
exploits the structure of the circuit:

* every register starts in a product state, so all gates that act inside a
  single patch register before the first cross-register gate are applied to
  small per-register factors;
* a register QFT is an FFT along that register's tensor axis and the CNOT ring
  of a kernel layer is one fixed basis permutation;
* the readout qubit is only touched by a Hadamard and by rotations controlled
  on data qubits, so ``<Z_r> = sum_k |phi_k|^2 f_k`` with a readout table
  ``f`` that depends on the perceptron angles alone.

Theta layout: kernel angles ``(depth, layers, q, 3)`` flattened, then the
``4 q`` perceptron angles.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import StructuralError
from .qsim import PAULI_X, PAULI_Y, PAULI_Z, rot_zyz, rx, ry, rz

_MAX_BATCH_AMPLITUDES = 1 << 22


@dataclass(frozen=True)
class _Op:
    kind: str  # "enc" | "rot" | "dft" | "perm"
    register: int | None  # None when the op spans several registers
    qubit: int = -1
    index: int = -1  # first theta index of the layer ("rot") or input index ("enc")
    inverse: bool = False  # for "dft"
    perm: tuple = ()


def ring_permutation(num_qubits: int) -> np.ndarray:
    """Basis permutation of CNOT(0->1), ..., CNOT(q-2->q-1), CNOT(q-1->0).

    Applying the ring to amplitudes ``x`` gives ``x[perm]``.
    """
    dim = 1 << num_qubits
    perm = np.arange(dim)
    if num_qubits < 2:
        return perm
    k = np.arange(dim)
    pairs = [(i, i + 1) for i in range(num_qubits - 1)] + [(num_qubits - 1, 0)]
    for c, t in pairs:
        cmask = 1 << (num_qubits - 1 - c)
        tmask = 1 << (num_qubits - 1 - t)
        perm = perm[np.where(k & cmask, k ^ tmask, k)]
    return perm


class Evaluator:
    """Structured simulator for one model configuration."""

    def __init__(self, encoding: str, num_patches: int, register_qubits: int, kernel_layers: int,
                 depth: int, use_qft: bool, use_perceptron: bool):
        self.encoding = encoding
        self.num_registers = num_patches
        self.b = register_qubits
        self.q = num_patches * register_qubits
        self.kernel_layers = kernel_layers
        self.depth = depth
        self.use_qft = use_qft
        self.use_perceptron = use_perceptron
        self.num_kernel_params = depth * kernel_layers * self.q * 3
        self.num_perceptron_params = 4 * self.q if use_perceptron else 0
        self.num_theta = self.num_kernel_params + self.num_perceptron_params
        self.num_inputs = self.q if encoding == "angle" else num_patches * (1 << register_qubits)
        self._build_program()

    # ------------------------------------------------------------------ program

    def _build_program(self) -> None:
        ops: list[_Op] = []
        b, q, n_reg = self.b, self.q, self.num_registers
        if self.encoding == "angle":
            ops += [_Op("enc", i // b, qubit=i, index=i) for i in range(q)]
        ring = tuple(ring_permutation(q)) if self.kernel_layers and q > 1 else ()
        ring_register = 0 if n_reg == 1 else None
        t = 0
        for _ in range(self.depth):
            if self.use_qft:
                ops += [_Op("dft", s, inverse=False) for s in range(n_reg)]
            for _ in range(self.kernel_layers):
                ops += [_Op("rot", s, index=t) for s in range(n_reg)]
                if ring:
                    ops.append(_Op("perm", ring_register, perm=ring))
                t += 3 * q
            if self.use_qft:
                ops += [_Op("dft", s, inverse=True) for s in range(n_reg)]
        split = next((i for i, op in enumerate(ops) if op.register is None), len(ops))
        self.local_ops = [[op for op in ops[:split] if op.register == s] for s in range(n_reg)]
        self.global_ops = ops[split:]
        self._perm_cache: dict[tuple, tuple[np.ndarray, np.ndarray]] = {}

    def _perm_arrays(self, perm: tuple) -> tuple[np.ndarray, np.ndarray]:
        if perm not in self._perm_cache:
            fwd = np.asarray(perm, dtype=np.intp)
            self._perm_cache[perm] = (fwd, np.argsort(fwd))
        return self._perm_cache[perm]

    # ------------------------------------------------------------------ state kernels

    @staticmethod
    def _ry(x: np.ndarray, n: int, qubit: int, angle: np.ndarray) -> None:
        """In-place RY with one angle per sample on ``qubit`` of (B, 2^n) amplitudes."""
        v = x.reshape(x.shape[0], 1 << qubit, 2, 1 << (n - qubit - 1))
        angle = np.asarray(angle, dtype=float).reshape(-1, 1, 1)
        c, s = np.cos(angle / 2), np.sin(angle / 2)
        x0 = v[:, :, 0, :].copy()
        x1 = v[:, :, 1, :]
        v[:, :, 0, :] = c * x0 - s * x1
        v[:, :, 1, :] = s * x0 + c * x1

    def _block_view(self, x: np.ndarray, n: int, register: int) -> np.ndarray:
        """(B, pre, 2^b, post) view of (B, 2^n) amplitudes around one register."""
        pre = 1 << (register * self.b)
        return x.reshape(x.shape[0], pre, 1 << self.b, -1)

    def _apply_block(self, x: np.ndarray, n: int, register: int, u: np.ndarray) -> np.ndarray:
        """Applies a 2^b x 2^b matrix to one register of (B, 2^n) amplitudes."""
        v = self._block_view(x, n, register)
        if v.shape[3] == 1:
            return (v.reshape(-1, u.shape[0]) @ u.T).reshape(x.shape)
        return np.matmul(u, v).reshape(x.shape)

    def _block_moment(self, lam: np.ndarray, chi: np.ndarray, n: int, register: int) -> np.ndarray:
        """Per-sample R[a, b] = sum over other registers of conj(lam_a) chi_b."""
        batch, dim = chi.shape[0], 1 << self.b
        l = self._block_view(lam, n, register).transpose(0, 2, 1, 3).reshape(batch, dim, -1)
        c = self._block_view(chi, n, register).transpose(0, 2, 1, 3).reshape(batch, dim, -1)
        return np.conj(l) @ c.transpose(0, 2, 1)

    def _layer_angles(self, theta, op: _Op) -> np.ndarray:
        start = op.index + 3 * op.register * self.b
        return np.asarray(theta[start:start + 3 * self.b]).reshape(self.b, 3)

    def _layer_unitary(self, theta, op: _Op) -> np.ndarray:
        u = np.ones((1, 1), dtype=complex)
        for angles in self._layer_angles(theta, op):
            u = np.kron(u, rot_zyz(*angles))
        return u

    def _layer_generators(self, theta, op: _Op) -> np.ndarray:
        """(3b, 2^b, 2^b) generators, each embedded on its qubit of the register."""
        out = []
        for j, angles in enumerate(self._layer_angles(theta, op)):
            left, right = np.eye(1 << j), np.eye(1 << (self.b - j - 1))
            out += [np.kron(np.kron(left, g), right) for g in self._rot_generators(angles)]
        return np.array(out)

    @staticmethod
    def _moment(lam: np.ndarray, chi: np.ndarray, n: int, qubit: int) -> np.ndarray:
        """Per-sample M[a, b] = sum over other qubits of conj(lam_a) chi_b, shape (B, 2, 2)."""
        batch = chi.shape[0]
        l = lam.reshape(batch, 1 << qubit, 2, -1).transpose(0, 2, 1, 3).reshape(batch, 2, -1)
        c = chi.reshape(batch, 1 << qubit, 2, -1).transpose(0, 2, 1, 3).reshape(batch, 2, -1)
        return np.conj(l) @ c.transpose(0, 2, 1)

    @staticmethod
    def _pauli_im(lam: np.ndarray, chi: np.ndarray, n: int, qubit: int, pauli: np.ndarray) -> np.ndarray:
        """Per-sample Im <lam| P_qubit |chi> for a 2x2 Hermitian P."""
        m = Evaluator._moment(lam, chi, n, qubit)
        return np.einsum("zab,ab->z", m, pauli).imag

    @staticmethod
    def _rot_generators(angles) -> list[np.ndarray]:
        """Generators G with dU/dt = -i/2 G U for U = RotZYZ(alpha, beta, gamma)."""
        alpha, beta, _ = angles
        za = rz(alpha)
        zy = za @ ry(beta)
        return [PAULI_Z, za @ PAULI_Y @ za.conj().T, zy @ PAULI_Z @ zy.conj().T]

    def _dft_axes(self, x: np.ndarray, registers: list[int], inverse: bool, n_reg: int) -> np.ndarray:
        batch = x.shape[0]
        shaped = x.reshape((batch,) + (1 << self.b,) * n_reg)
        axes = [1 + s for s in registers]
        # forward QFT = numpy ifft (positive exponent), unitary normalisation
        out = np.fft.fftn(shaped, axes=axes, norm="ortho") if inverse else np.fft.ifftn(
            shaped, axes=axes, norm="ortho")
        return out.reshape(batch, -1)

    def _apply(self, x: np.ndarray, op: _Op, n: int, theta, inputs, local: bool,
               adjoint: bool = False) -> np.ndarray:
        sign = -1.0 if adjoint else 1.0
        offset = op.register * self.b if local else 0
        if op.kind == "rot":
            u = self._layer_unitary(theta, op)
            return self._apply_block(x, n, 0 if local else op.register, u.conj().T if adjoint else u)
        if op.kind == "enc":
            self._ry(x, n, op.qubit - offset, sign * inputs[:, op.index])
            return x
        if op.kind == "dft":
            regs = [0] if local else [op.register]
            return self._dft_axes(x, regs, op.inverse != adjoint, 1 if local else self.num_registers)
        fwd, inv = self._perm_arrays(op.perm)
        return x[:, inv if adjoint else fwd]

    def _run_global(self, chi: np.ndarray, theta, saved: dict | None = None) -> np.ndarray:
        """Applies the global ops; ``saved`` collects the state after each kernel block."""
        ops = self.global_ops
        i = 0
        while i < len(ops):
            op = ops[i]
            if op.kind == "dft":
                j = i
                while j < len(ops) and ops[j].kind == "dft" and ops[j].inverse == op.inverse:
                    j += 1
                chi = self._dft_axes(chi, [o.register for o in ops[i:j]], op.inverse, self.num_registers)
                i = j
                continue
            chi = self._apply(chi, op, self.q, theta, None, local=False)
            if saved is not None and op.kind == "rot":
                saved[i] = chi
            i += 1
        return chi

    # ------------------------------------------------------------------ readout

    def readout_table(self, perceptron) -> np.ndarray:
        if not self.use_perceptron:
            return np.zeros(1 << self.q)
        return _perceptron_bloch_prefix(np.asarray(perceptron, dtype=float), self.q)[-1][:, 2].copy()

    # ------------------------------------------------------------------ public API

    def _initial_factors(self, inputs: np.ndarray) -> list[np.ndarray]:
        batch = inputs.shape[0]
        dim = 1 << self.b
        if self.encoding == "angle":
            f = np.zeros((batch, dim), dtype=complex)
            f[:, 0] = 1.0
            return [f.copy() for _ in range(self.num_registers)]
        amps = inputs.reshape(batch, self.num_registers, dim)
        return [amps[:, s, :].astype(complex) for s in range(self.num_registers)]

    def _check(self, theta, inputs) -> tuple[np.ndarray, np.ndarray]:
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.num_theta,):
            raise StructuralError(f"expected {self.num_theta} circuit parameters, got {theta.shape}")
        inputs = np.asarray(inputs, dtype=float)
        inputs = inputs.reshape(inputs.shape[0], -1)
        if inputs.shape[1] != self.num_inputs:
            raise StructuralError(f"expected {self.num_inputs} encoding inputs per sample")
        return theta, inputs

    def _chunks(self, batch: int):
        step = max(1, _MAX_BATCH_AMPLITUDES >> self.q)
        for start in range(0, batch, step):
            yield slice(start, min(batch, start + step))

    def _forward_state(self, theta, inputs, saved: dict | None = None):
        factors = self._initial_factors(inputs)
        for s, ops in enumerate(self.local_ops):
            for op in ops:
                factors[s] = self._apply(factors[s], op, self.b, theta, inputs, local=True)
        chi = factors[0]
        for f in factors[1:]:
            chi = (chi[:, :, None] * f[:, None, :]).reshape(chi.shape[0], -1)
        return factors, self._run_global(chi, theta, saved)

    def expectation(self, theta, inputs) -> np.ndarray:
        """<Z_readout> for each row of ``inputs``."""
        theta, inputs = self._check(theta, inputs)
        out = np.zeros(inputs.shape[0])
        if not self.use_perceptron:
            return out
        table = self.readout_table(theta[self.num_kernel_params:])
        for sl in self._chunks(inputs.shape[0]):
            _, phi = self._forward_state(theta, inputs[sl])
            out[sl] = (np.abs(phi) ** 2) @ table
        return out

    def data_probabilities(self, theta, inputs) -> np.ndarray:
        theta, inputs = self._check(theta, inputs)
        _, phi = self._forward_state(theta, inputs)
        return np.abs(phi) ** 2

    def expectation_and_grad(self, theta, inputs):
        """Returns (e, d e / d theta, d e / d inputs), all per sample."""
        theta, inputs = self._check(theta, inputs)
        batch = inputs.shape[0]
        e = np.zeros(batch)
        g_theta = np.zeros((batch, self.num_theta))
        g_in = np.zeros((batch, self.num_inputs))
        if not self.use_perceptron:
            return e, g_theta, g_in
        readout = _PerceptronReadout(theta[self.num_kernel_params:], self.q)
        for sl in self._chunks(batch):
            e[sl], g_theta[sl], g_in[sl] = self._grad_chunk(theta, inputs[sl], readout)
        return e, g_theta, g_in

    def _rot_grad(self, g_theta, lam, chi, n, register, op, theta) -> None:
        # rotations inside a layer commute, so every generator acts after the whole block
        r = self._block_moment(lam, chi, n, register)
        start = op.index + 3 * op.register * self.b
        g_theta[:, start:start + 3 * self.b] += np.einsum("zab,kab->zk", r, self._layer_generators(theta, op)).imag

    def _grad_chunk(self, theta, inputs, readout):
        batch = inputs.shape[0]
        nk = self.num_kernel_params
        g_theta = np.zeros((batch, self.num_theta))
        g_in = np.zeros((batch, self.num_inputs))
        saved: dict[int, np.ndarray] = {}
        factors, phi = self._forward_state(theta, inputs, saved)
        probs = np.abs(phi) ** 2
        e = probs @ readout.table
        g_theta[:, nk:] = readout.gradient(probs)

        # d e / d phi-bar: e = <phi| F |phi>, seed lam = F phi
        lam = phi * readout.table
        for i in range(len(self.global_ops) - 1, -1, -1):
            op = self.global_ops[i]
            if op.kind == "rot":
                self._rot_grad(g_theta, lam, saved[i], self.q, op.register, op, theta)
            lam = self._apply(lam, op, self.q, theta, None, local=False, adjoint=True)

        mus = _factor_cotangents(lam, factors, 1 << self.b)
        for s, ops in enumerate(self.local_ops):
            chi_s, lam_s = factors[s], mus[s]
            for op in reversed(ops):
                if op.kind == "rot":
                    self._rot_grad(g_theta, lam_s, chi_s, self.b, 0, op, theta)
                elif op.kind == "enc":
                    g_in[:, op.index] += self._pauli_im(lam_s, chi_s, self.b, op.qubit - s * self.b, PAULI_Y)
                chi_s = self._apply(chi_s, op, self.b, theta, inputs, local=True, adjoint=True)
                lam_s = self._apply(lam_s, op, self.b, theta, inputs, local=True, adjoint=True)
            if self.encoding == "amplitude":
                dim = 1 << self.b
                g_in[:, s * dim:(s + 1) * dim] = 2.0 * lam_s.real
        return e, g_theta, g_in


def _factor_cotangents(lam: np.ndarray, factors: list[np.ndarray], dim: int) -> list[np.ndarray]:
    """mu_s[i] = sum over other registers of lam * conj(other factors)."""
    n_reg = len(factors)
    batch = lam.shape[0]
    if n_reg == 1:
        return [lam]
    tensor = lam.reshape((batch,) + (dim,) * n_reg)
    letters = "abcdefghijklmnopqrstuvwxy"[:n_reg]
    out = []
    conj = [np.conj(f) for f in factors]
    for s in range(n_reg):
        others = [r for r in range(n_reg) if r != s]
        spec = "z" + letters + "," + ",".join("z" + letters[r] for r in others) + "->z" + letters[s]
        out.append(np.einsum(spec, tensor, *[conj[r] for r in others], optimize="greedy"))
    return out


# ---------------------------------------------------------------------- perceptron readout
#
# Data qubit i contributes W_i(bit) = RZ(t3) [RZ(t2)] RX(t1) [RX(t0)] to the
# readout, bracketed factors present only when the control bit is 1.  The
# readout state for basis state k is W_{q-1}(k_{q-1}) ... W_0(k_0) |+>.


def _block_matrices(t: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    t0, t1, t2, t3 = t
    w0 = rz(t3) @ rx(t1)
    w1 = rz(t3) @ rz(t2) @ rx(t1) @ rx(t0)
    return w0, w1


def _block_derivatives(t: np.ndarray) -> list[list[np.ndarray | None]]:
    """[bit][param] derivative matrices d W_i(bit) / d t_param."""
    t0, t1, t2, t3 = t
    hx, hz = -0.5j * PAULI_X, -0.5j * PAULI_Z
    d0 = [None, rz(t3) @ hx @ rx(t1), None, hz @ rz(t3) @ rx(t1)]
    d1 = [
        rz(t3) @ rz(t2) @ rx(t1) @ hx @ rx(t0),
        rz(t3) @ rz(t2) @ hx @ rx(t1) @ rx(t0),
        rz(t3) @ hz @ rz(t2) @ rx(t1) @ rx(t0),
        hz @ rz(t3) @ rz(t2) @ rx(t1) @ rx(t0),
    ]
    return [d0, d1]


_PAULIS = (PAULI_X, PAULI_Y, PAULI_Z)


def _adjoint(w: np.ndarray, dw: np.ndarray | None = None) -> np.ndarray:
    """Bloch-vector rotation R[a, b] = tr(s_a W s_b W^dagger) / 2, or its derivative along dW."""
    if dw is None:
        return np.array([[0.5 * np.trace(sa @ w @ sb @ w.conj().T).real for sb in _PAULIS] for sa in _PAULIS])
    return np.array([[np.trace(sa @ dw @ sb @ w.conj().T).real for sb in _PAULIS] for sa in _PAULIS])


def _perceptron_bloch_prefix(theta_p: np.ndarray, q: int) -> list[np.ndarray]:
    """Readout Bloch vectors after data qubits 0..i-1, shape (2^i, 3) for each i."""
    vecs = [np.array([[1.0, 0.0, 0.0]])]
    for i in range(q):
        rots = [_adjoint(w) for w in _block_matrices(theta_p[4 * i:4 * i + 4])]
        prev = vecs[-1]
        vecs.append(np.stack([prev @ r.T for r in rots], axis=1).reshape(-1, 3))
    return vecs


class _PerceptronReadout:
    def __init__(self, theta_p: np.ndarray, q: int):
        self.q = q
        self.theta_p = np.asarray(theta_p, dtype=float)
        self.prefix = _perceptron_bloch_prefix(self.theta_p, q)
        self.table = self.prefix[-1][:, 2].copy()

    def gradient(self, probs: np.ndarray) -> np.ndarray:
        """d/d theta_p of sum_k probs[:, k] f_k, shape (B, 4q)."""
        q = self.q
        batch = probs.shape[0]
        grad = np.zeros((batch, 4 * q))
        # obs[z, p] is the Heisenberg-picture Z observable as a real Bloch covector,
        # folded one bit at a time from the last data qubit backwards
        obs = np.zeros((batch, 1 << q, 3))
        obs[:, :, 2] = probs
        for i in range(q - 1, -1, -1):
            t = self.theta_p[4 * i:4 * i + 4]
            mats = _block_matrices(t)
            derivs = _block_derivatives(t)
            prev = self.prefix[i]
            split = obs.reshape(batch, 1 << i, 2, 3)
            for bit in (0, 1):
                cols = [j for j, d in enumerate(derivs[bit]) if d is not None]
                # table[p, a, j] = (dR/dt_j r_p)[a]
                table = np.stack([prev @ _adjoint(mats[bit], derivs[bit][j]).T for j in cols], axis=-1)
                val = split[:, :, bit].reshape(batch, -1) @ table.reshape(-1, len(cols))
                grad[:, [4 * i + j for j in cols]] += val
            obs = sum(split[:, :, bit] @ _adjoint(mats[bit]) for bit in (0, 1))
        return grad


@lru_cache(maxsize=32)
def evaluator_for(encoding: str, num_patches: int, register_qubits: int, kernel_layers: int,
                  depth: int, use_qft: bool, use_perceptron: bool) -> Evaluator:
    return Evaluator(encoding, num_patches, register_qubits, kernel_layers, depth, use_qft, use_perceptron)
