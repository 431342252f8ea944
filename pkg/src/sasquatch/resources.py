"""Static qubit, parameter and gate counts for a model configuration."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .errors import StructuralError
from .model import ModelConfig

STAGES = ("embedding", "qft", "kernel", "readout", "perceptron", "head")


@dataclass
class ResourceEstimate:
    qubits: int
    params: int
    gates_exact: int
    gates_asymptotic: dict[str, str]
    breakdown: dict[str, dict[str, int]] = field(default_factory=dict)

    def report(self) -> str:
        lines = [
            f"qubits      {self.qubits}",
            f"parameters  {self.params}",
            f"gates       {self.gates_exact}",
            "",
            f"{'stage':<12}{'gates':>8}{'params':>8}",
        ]
        for stage in STAGES:
            row = self.breakdown[stage]
            lines.append(f"{stage:<12}{row['gates']:>8}{row['params']:>8}")
        lines.append("")
        lines += [f"{key}: {text}" for key, text in self.gates_asymptotic.items()]
        return "\n".join(lines) + "\n"

    def key_values(self) -> str:
        lines = [f"qubits={self.qubits}", f"params={self.params}", f"gates_exact={self.gates_exact}"]
        for stage in STAGES:
            row = self.breakdown[stage]
            lines.append(f"{stage}.gates={row['gates']}")
            lines.append(f"{stage}.params={row['params']}")
        lines += [f"asymptotic.{key}={text}" for key, text in self.gates_asymptotic.items()]
        return "\n".join(lines) + "\n"


def readout_qubits(classes: int) -> int:
    if classes < 2:
        raise StructuralError("need at least two classes")
    return math.ceil(math.log2(classes))


def qft_gate_count(b: int) -> int:
    """Hadamards, controlled phases and swaps of the exact b-qubit QFT."""
    return b + b * (b - 1) // 2 + b // 2


def estimate(config: ModelConfig, classes: int = 2, approx_prep_depth: int | None = None) -> ResourceEstimate:
    """Counts for the circuit ``build_circuit`` emits (one perceptron per readout qubit)."""
    r = readout_qubits(classes)
    if approx_prep_depth is not None and approx_prep_depth < 1:
        raise StructuralError("approximate preparation depth must be >= 1")
    q, n, b = config.data_qubits, config.num_patches, config.register_qubits
    layers = config.depth * config.kernel_layers
    ring = q if q >= 2 else 0

    breakdown = {
        "embedding": {"gates": q if config.encoding == "angle" else 0, "params": 0},
        "qft": {"gates": 2 * n * qft_gate_count(b) * config.depth if config.use_qft else 0, "params": 0},
        "kernel": {"gates": layers * (q + ring), "params": 3 * q * layers},
        "readout": {"gates": r, "params": 0},
        "perceptron": {"gates": 4 * q * r if config.use_perceptron else 0,
                       "params": 4 * q * r if config.use_perceptron else 0},
        "head": {"gates": 0, "params": 2},
    }
    return ResourceEstimate(
        qubits=q + r,
        params=sum(s["params"] for s in breakdown.values()),
        gates_exact=sum(s["gates"] for s in breakdown.values()),
        gates_asymptotic=_asymptotic(config, classes, approx_prep_depth),
        breakdown=breakdown,
    )


def _asymptotic(config: ModelConfig, classes: int, approx_prep_depth: int | None) -> dict[str, str]:
    q, n, b = config.data_qubits, config.num_patches, config.register_qubits
    out = {"symbols": f"q={q} N={n} l={config.kernel_layers} c={classes} qubits_per_patch={b}"}
    if config.encoding == "angle":
        out["qubits"] = "O(N 4^v + log c)"
        out["params"] = "O(N 4^v (l + log c))"
        out["embedding"] = "O(1) depth"
        out["total"] = "O(N 4^v log(c N 4^v))"
    else:
        out["qubits"] = "O(2 N v)"
        out["params"] = "O(N v (l + log c))"
        # prepared per patch register, not as one 2Nv-qubit state
        out["embedding"] = f"N x O(4^v) per-patch preparation, {n} x 2^{b} amplitudes"
        out["total"] = "O(4^(N v) + N v log(c N v)) worst case"
        if approx_prep_depth is not None:
            out["total_approx"] = f"O(N v (b + log(c N v))) with b={approx_prep_depth}"
    out["qft"] = "O(q log q) per transform (approximate QFT)"
    out["kernel"] = "O(q) per layer"
    out["perceptron"] = "O(4 q log c)"
    return out
