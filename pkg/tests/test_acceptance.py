"""End-to-end acceptance checks, one test per criterion.

Scale is chosen with ``SASQUATCH_ACCEPTANCE``: ``smoke`` (default) runs the
reduced training budgets, ``full`` runs the stated reproduction budgets (hours
on one core).  Run artifacts go to ``SASQUATCH_ACCEPTANCE_OUT`` when set.
"""

from __future__ import annotations

import os
import time
from pathlib import Path

import numpy as np
import pytest

from sasquatch import qsim
from sasquatch.attention import StationaryKernel, kernel_attention_direct, kernel_attention_fft
from sasquatch.cli import DIGIT_PAIR_CASES, LINES_CASES, ExperimentSpec, main, run_ablation, run_experiment
from sasquatch.data import MNIST_FILES
from sasquatch.model import build_circuit, parameter_count
from sasquatch.qsim import Circuit, Gate, QuantumState
from sasquatch.resources import estimate
from sasquatch.train import grad_adjoint, grad_finite_difference, grad_parameter_shift

from test_train import gradient_cases, rel_err

FULL = os.environ.get("SASQUATCH_ACCEPTANCE", "smoke") == "full"
MNIST_DIR = Path(os.environ.get("SASQUATCH_MNIST_DIR", "/root/data/mnist"))
HAVE_MNIST = all((MNIST_DIR / name).exists() for name in MNIST_FILES.values())
needs_mnist = pytest.mark.skipif(not HAVE_MNIST, reason="MNIST IDX files not available")
SCALE = "full" if FULL else "smoke"


@pytest.fixture
def out_dir(tmp_path, request):
    root = os.environ.get("SASQUATCH_ACCEPTANCE_OUT")
    path = Path(root) / request.node.name if root else tmp_path
    path.mkdir(parents=True, exist_ok=True)
    return path


def log_to(path: Path):
    handle = path.open("a")

    def log(message: str) -> None:
        handle.write(message + "\n")
        handle.flush()

    return log


def summary(values) -> str:
    values = np.asarray(values) * 100
    std = values.std(ddof=1) if values.size > 1 else 0.0
    return f"{values.mean():.2f} ({std:.2f})"


def test_criterion_1_kernel_convolution_identity(criterion):
    rng = np.random.default_rng(1)
    start = time.perf_counter()
    worst = 0.0
    for _ in range(200):
        n, d = int(rng.integers(1, 33)), int(rng.integers(1, 9))
        kernel = StationaryKernel(rng.normal(size=(n, d, d)))
        x = rng.normal(size=(n, d))
        worst = max(worst, float(np.max(np.abs(kernel_attention_fft(x, kernel) - kernel_attention_direct(x, kernel)))))
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-10 and elapsed < 5
    criterion(1, ok, f"200 cases, max |fft - direct| = {worst:.2e} (tol 1e-10), {elapsed:.2f} s (< 5 s)")
    assert ok


def _random_circuit(rng: np.random.Generator, n: int, length: int) -> Circuit:
    kinds = ["H", "RX", "RY", "RZ", "RotZYZ"] + (["CNOT", "SWAP", "CRX", "CRZ", "CPhase"] if n > 1 else [])
    gates = []
    for _ in range(length):
        kind = kinds[rng.integers(len(kinds))]
        wires = [int(w) for w in rng.permutation(n)]
        angles = tuple(float(a) for a in rng.uniform(-2 * np.pi, 2 * np.pi, qsim.GATE_SLOTS[kind]))
        if kind == "SWAP":
            gates.append(Gate(kind, (wires[0], wires[1])))
        elif kind in ("CNOT", "CRX", "CRZ", "CPhase"):
            gates.append(Gate(kind, (wires[0],), (wires[1],), angles))
        else:
            gates.append(Gate(kind, (wires[0],), angles=angles))
    return Circuit(n, gates)


def test_criterion_2_simulator_correctness(criterion):
    rng = np.random.default_rng(2)
    start = time.perf_counter()
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(1, 7))
        circuit = _random_circuit(rng, n, int(rng.integers(1, 60)))
        amps = rng.normal(size=2**n) + 1j * rng.normal(size=2**n)
        state = QuantumState(n, amps / np.linalg.norm(amps))
        expected = qsim.dense_unitary_oracle(circuit) @ state.amplitudes
        worst = max(worst, float(np.max(np.abs(qsim.run_circuit(circuit, state=state).amplitudes - expected))))
    worst_qft = 0.0
    for b in range(1, 6):
        j = np.arange(2**b)
        dft = np.exp(2j * np.pi * np.outer(j, j) / 2**b) / np.sqrt(2**b)
        for inverse, target in ((False, dft), (True, dft.conj().T)):
            u = qsim.dense_unitary_oracle(Circuit(b, qsim.qft_gates(range(b), inverse=inverse)))
            worst_qft = max(worst_qft, float(np.max(np.abs(u - target))))
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-10 and worst_qft <= 1e-12 and elapsed < 30
    criterion(2, ok, f"100 circuits max err {worst:.2e} (tol 1e-10); QFT b<=5 max err {worst_qft:.2e} "
                     f"(tol 1e-12); {elapsed:.2f} s (< 30 s)")
    assert ok


def test_criterion_3_gradient_correctness(criterion):
    start = time.perf_counter()
    cases = gradient_cases(24)
    worst_shift = worst_fd = 0.0
    for config, params, image, label, loss in cases:
        adj = grad_adjoint(config, params, image, label, loss)
        shift = grad_parameter_shift(config, params, image, label, loss)
        fd = grad_finite_difference(config, params, image, label, loss, h=1e-5)
        worst_shift = max(worst_shift, rel_err(adj, shift))
        worst_fd = max(worst_fd, rel_err(adj, fd), rel_err(shift, fd))
    elapsed = time.perf_counter() - start
    covered = {(c.encoding, c.kernel_layers, c.use_qft, loss) for c, *_, loss in cases}
    coverage = ({e for e, *_ in covered} == {"angle", "amplitude"} and {l for _, l, *_ in covered} == {0, 1, 2}
                and {q for _, _, q, _ in covered} == {True, False} and {s for *_, s in covered} == {"l1", "soft_margin"})
    ok = worst_shift < 1e-8 and worst_fd < 1e-6 and elapsed < 120 and coverage
    criterion(3, ok, f"{len(cases)} models; adjoint vs shift {worst_shift:.2e} (tol 1e-8); vs FD {worst_fd:.2e} "
                     f"(tol 1e-6); {elapsed:.1f} s (< 120 s)")
    assert ok


def test_criterion_4_synthetic_table(criterion, out_dir):
    if FULL:
        spec = ExperimentSpec.for_task("lines", n_train=500, epochs=100, num_restarts=5, learning_rate=0.001)
        top, low = 0.90, 0.70
    else:
        spec = ExperimentSpec.for_task("lines", n_train=200, epochs=30, num_restarts=2, learning_rate=0.001)
        top, low = 0.85, 0.75
    start = time.perf_counter()
    results = run_ablation(spec, list(LINES_CASES), out_dir, log_to(out_dir / "progress.log"))
    elapsed = time.perf_counter() - start
    val = {name: [r.final.val_accuracy for r in runs] for name, runs in results.items()}
    train = {name: [r.final.train_accuracy for r in runs] for name, runs in results.items()}
    means = {name: float(np.mean(v)) for name, v in val.items()}
    ok = (means["sasquatch"] >= top and means["no_qft"] <= low and means["baseline"] <= low
          and means["sasquatch"] > max(means["no_qft"], means["baseline"]))
    if not FULL:
        ok = ok and elapsed <= 15 * 60
    table = "; ".join(f"{name} train {summary(train[name])} val {summary(val[name])}" for name in val)
    criterion(4, ok, f"[{SCALE}] {table}; need sasquatch >= {100 * top:.0f}, ablations <= {100 * low:.0f}; "
                     f"{elapsed / 60:.1f} min")
    assert ok


@needs_mnist
def test_criterion_5_mnist_one_three(criterion, out_dir):
    epochs, threshold = (200, 0.90) if FULL else (50, 0.85)
    spec = ExperimentSpec.for_task("mnist_pair", digits=(1, 3), epochs=epochs, mnist_dir=str(MNIST_DIR))
    start = time.perf_counter()
    (result,) = run_experiment(spec, out_dir=out_dir, log=log_to(out_dir / "progress.log"))
    elapsed = time.perf_counter() - start
    ok = result.test_accuracy >= threshold
    criterion(5, ok, f"[{SCALE}] {{1,3}} {epochs} epochs, test accuracy {100 * result.test_accuracy:.2f}% "
                     f"on 2145 images (need >= {100 * threshold:.0f}%); {elapsed / 60:.1f} min")
    assert ok


@needs_mnist
def test_criterion_6_mnist_three_eight_trend(criterion, out_dir):
    epochs = 200 if FULL else 10
    spec = ExperimentSpec.for_task("mnist_pair", digits=(3, 8), epochs=epochs, num_restarts=5,
                                   mnist_dir=str(MNIST_DIR))
    start = time.perf_counter()
    results = run_ablation(spec, ["7", "3"], out_dir, log_to(out_dir / "progress.log"))
    elapsed = time.perf_counter() - start
    best = [r.test_accuracy for r in results["7"]]
    no_qft = [r.test_accuracy for r in results["3"]]
    mean_ok = np.mean(best) > np.mean(no_qft)
    std_ok = np.std(best, ddof=1) < np.std(no_qft, ddof=1)
    ok = bool(mean_ok and std_ok)
    criterion(6, ok, f"[{SCALE}] {{3,8}} {epochs} epochs x 5 restarts, test acc eps=8 l=3 {summary(best)} vs "
                     f"no-QFT {summary(no_qft)}; mean higher: {mean_ok}, std smaller: {std_ok}; "
                     f"{elapsed / 60:.1f} min")
    assert ok


def test_criterion_7_resource_formulas(criterion):
    synthetic = ExperimentSpec.for_task("lines").model_config()
    mnist = ExperimentSpec.for_task("mnist_pair").model_config()
    mismatches = []
    for name, (_, overrides) in DIGIT_PAIR_CASES.items():
        config = ExperimentSpec.for_task("mnist_pair", **overrides).model_config()
        est = estimate(config)
        circuit = build_circuit(config)
        census = parameter_count(config)
        if (est.qubits, est.params) != (circuit.num_qubits, census["total"] - census["embedding"]):
            mismatches.append(name)
    qubits = (estimate(synthetic).qubits, estimate(mnist).qubits)
    ok = qubits == (17, 9) and not mismatches
    criterion(7, ok, f"synthetic/MNIST qubits {qubits[0]}/{qubits[1]} (need 17/9); "
                     f"{len(DIGIT_PAIR_CASES)} ablation cases, census mismatches: {mismatches or 'none'}")
    assert ok


def _tree_bytes(root: Path) -> dict[str, bytes]:
    # spec.json records the output directory itself, so it differs by construction
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*"))
            if p.is_file() and p.name != "spec.json"}


def test_criterion_8_determinism(criterion, tmp_path, capsys):
    runs = [("lines", ["train", "--task", "lines", "--n-train", "24", "--n-val", "8", "--epochs", "2",
                       "--restarts", "2", "--seed", "5"])]
    if HAVE_MNIST:
        runs.append(("mnist", ["train", "--task", "mnist_pair", "--digits", "3,8", "--n-train", "40",
                               "--n-val", "10", "--epochs", "2", "--mnist-dir", str(MNIST_DIR)]))
    runs.append(("ablate", ["ablate", "--task", "lines", "--n-train", "16", "--n-val", "8", "--epochs", "1",
                            "--embed-dim", "2"]))
    identical = []
    for name, argv in runs:
        trees = []
        for rep in ("a", "b"):
            out = tmp_path / name / rep
            assert main(argv + ["--out", str(out), "-q"]) == 0
            trees.append(_tree_bytes(out))
        identical.append(trees[0] == trees[1] and any(k.endswith("metrics.csv") for k in trees[0]))
    capsys.readouterr()
    ok = all(identical)
    criterion(8, ok, f"{len(runs)} repeated experiments ({', '.join(n for n, _ in runs)}), "
                     f"byte-identical output trees: {sum(identical)}/{len(runs)}")
    assert ok
