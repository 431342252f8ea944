"""Command-line experiment harness: generate, train, ablate, eval, resources."""

from __future__ import annotations

import argparse
import gzip
import hashlib
import json
import os
import sys
import urllib.request
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import (
    MNIST_MD5,
    Dataset,
    filter_digit_pair,
    generate_lines,
    load_mnist_split,
    read_dataset,
    subsample,
    verify_mnist_files,
    write_dataset,
)
from .errors import FormatError, SasquatchError, StructuralError
from .model import ModelConfig, init_params, load_checkpoint, save_checkpoint
from .resources import estimate
from .train import Metrics, TrainConfig, evaluate, train_model

TASKS = ("lines", "mnist_pair")
MNIST_DIR_ENV = "SASQUATCH_MNIST_DIR"
MNIST_URL = "https://ossci-datasets.s3.amazonaws.com/mnist/"
METRIC_COLUMNS = ("epoch", "train_loss", "train_acc", "val_loss", "val_acc")

TASK_DEFAULTS = {
    "lines": dict(encoding="angle", patch_size=2, embed_dim=4, trainable_embedding=False, epochs=100,
                  n_train=500, n_val=250),
    "mnist_pair": dict(encoding="amplitude", patch_size=16, embed_dim=4, trainable_embedding=True, epochs=200,
                       n_train=1000, n_val=100),
}


@dataclass(frozen=True)
class ExperimentSpec:
    task: str = "lines"
    digits: tuple[int, int] = (1, 3)
    encoding: str = "angle"
    patch_size: int = 2
    embed_dim: int = 4
    kernel_layers: int = 1
    depth: int = 1
    use_qft: bool = True
    use_perceptron: bool = True
    trainable_embedding: bool = False
    loss_kind: str = "l1"
    epochs: int = 100
    learning_rate: float = 0.001
    batch_size: int = 16
    seed: int = 0
    gradient_engine: str = "adjoint"
    num_restarts: int = 1
    n_train: int = 500
    n_val: int = 250
    data_seed: int = 0
    mnist_dir: str = ""
    out: str = "runs"

    def __post_init__(self):
        if self.task not in TASKS:
            raise StructuralError(f"task must be one of {TASKS}")
        if self.num_restarts < 1:
            raise StructuralError("num_restarts must be >= 1")
        if len(self.digits) != 2:
            raise StructuralError("digits must name exactly two classes")

    @classmethod
    def for_task(cls, task: str, **overrides) -> ExperimentSpec:
        if task not in TASKS:
            raise StructuralError(f"task must be one of {TASKS}")
        values = {**TASK_DEFAULTS[task], **overrides, "task": task}
        if "digits" in values:
            values["digits"] = tuple(int(d) for d in values["digits"])
        return cls(**values)

    def image_shape(self) -> tuple[int, int]:
        return (4, 4) if self.task == "lines" else (28, 28)

    def model_config(self) -> ModelConfig:
        rows, cols = self.image_shape()
        grid = (-(-rows // self.patch_size)) * (-(-cols // self.patch_size))
        return ModelConfig(
            encoding=self.encoding,
            num_patches=grid,
            embed_dim=self.embed_dim,
            kernel_layers=self.kernel_layers,
            depth=self.depth,
            use_qft=self.use_qft,
            use_perceptron=self.use_perceptron,
            patch_size=self.patch_size,
            trainable_embedding=self.trainable_embedding,
        )

    def train_config(self, seed: int) -> TrainConfig:
        return TrainConfig(self.epochs, self.learning_rate, self.batch_size, self.loss_kind, seed,
                           self.gradient_engine)


@dataclass
class Splits:
    train: Dataset
    val: Dataset
    test: Dataset | None = None


@dataclass
class RunResult:
    seed: int
    history: list[Metrics]
    test_loss: float | None = None
    test_accuracy: float | None = None

    @property
    def final(self) -> Metrics:
        return self.history[-1]


# --------------------------------------------------------------------------- data


def default_mnist_dir() -> str:
    return os.environ.get(MNIST_DIR_ENV, "mnist")


def load_splits(spec: ExperimentSpec) -> Splits:
    if spec.task == "lines":
        return Splits(generate_lines(spec.n_train, spec.data_seed), generate_lines(spec.n_val, spec.data_seed + 1))
    mnist_dir = spec.mnist_dir or default_mnist_dir()
    a, b = spec.digits
    pool = filter_digit_pair(load_mnist_split(mnist_dir, "train"), a, b)
    train, val = subsample(pool, spec.n_train, spec.n_val, spec.data_seed)
    test = filter_digit_pair(load_mnist_split(mnist_dir, "test"), a, b)
    return Splits(train, val, test)


def fetch_mnist(dest, base_url: str = MNIST_URL) -> dict[str, bool]:
    """Download the four gzipped IDX files and keep them only if their md5 matches."""
    dest = Path(dest)
    dest.mkdir(parents=True, exist_ok=True)
    for name, digest in MNIST_MD5.items():
        target = dest / name
        if target.exists() and hashlib.md5(target.read_bytes()).hexdigest() == digest:
            continue
        with urllib.request.urlopen(base_url.rstrip("/") + "/" + name + ".gz") as response:
            payload = gzip.decompress(response.read())
        found = hashlib.md5(payload).hexdigest()
        if found != digest:
            raise FormatError(f"{name}: checksum {found} does not match the published {digest}")
        target.write_bytes(payload)
    return verify_mnist_files(dest)


# --------------------------------------------------------------------------- runs


def format_float(x: float) -> str:
    return format(float(x), ".17g")


def metrics_csv(history: Sequence[Metrics]) -> str:
    lines = [",".join(METRIC_COLUMNS)]
    for m in history:
        row = m.row()
        lines.append(",".join(str(row["epoch"]) if c == "epoch" else format_float(row[c]) for c in METRIC_COLUMNS))
    return "\n".join(lines) + "\n"


def mean_std(values: Sequence[float]) -> str:
    """Percent mean and sample standard deviation, e.g. ``96.84 (2.87)``."""
    pct = 100.0 * np.asarray(values, dtype=float)
    std = float(np.std(pct, ddof=1)) if pct.size > 1 else 0.0
    return f"{float(np.mean(pct)):.2f} ({std:.2f})"


def run_experiment(spec: ExperimentSpec, splits: Splits | None = None, out_dir=None,
                   log=None) -> list[RunResult]:
    """Train ``num_restarts`` models with seeds seed, seed+1, ...; optionally write run files."""
    splits = load_splits(spec) if splits is None else splits
    config = spec.model_config()
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    results = []
    for k in range(spec.num_restarts):
        seed = spec.seed + k
        params = init_params(config, seed, spec.image_shape())

        def report(m: Metrics, _params, seed=seed):
            if log is not None:
                log(f"seed {seed} epoch {m.epoch}: train {m.train_accuracy:.3f} val {m.val_accuracy:.3f}")

        params, history = train_model(config, spec.train_config(seed), splits.train, splits.val, params, report)
        result = RunResult(seed, history)
        if splits.test is not None:
            result.test_loss, result.test_accuracy = evaluate(config, params, splits.test, spec.loss_kind)
        results.append(result)
        if out is not None:
            (out / f"run{k}_metrics.csv").write_text(metrics_csv(history))
            save_checkpoint(out / f"run{k}.ckpt", config, params)
    if out is not None:
        (out / "spec.json").write_text(json.dumps(asdict(spec), indent=2) + "\n")
        (out / "summary.txt").write_text(summary_text(spec, results))
    return results


def summary_text(spec: ExperimentSpec, results: Sequence[RunResult]) -> str:
    lines = [
        f"task: {spec.task}" + (f" digits {spec.digits[0]},{spec.digits[1]}" if spec.task == "mnist_pair" else ""),
        f"restarts: {len(results)} (seeds {results[0].seed}..{results[-1].seed})",
        f"train_acc: {mean_std([r.final.train_accuracy for r in results])}",
        f"val_acc: {mean_std([r.final.val_accuracy for r in results])}",
    ]
    if results[0].test_accuracy is not None:
        lines.append(f"test_acc: {mean_std([r.test_accuracy for r in results])}")
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------- ablations

# case name -> (description, spec overrides); the {3,8} sweep list
DIGIT_PAIR_CASES = {
    "1": ("perceptron only, eps=4", dict(embed_dim=4, kernel_layers=0, use_qft=False)),
    "2": ("SASQuaTCh eps=4, l=1", dict(embed_dim=4, kernel_layers=1)),
    "3": ("no QFT, eps=4, l=1", dict(embed_dim=4, kernel_layers=1, use_qft=False)),
    "4": ("SASQuaTCh eps=8, l=1", dict(embed_dim=8, kernel_layers=1)),
    "5": ("SASQuaTCh eps=4, l=2", dict(embed_dim=4, kernel_layers=2)),
    "6": ("SASQuaTCh eps=8, l=2", dict(embed_dim=8, kernel_layers=2)),
    "7": ("SASQuaTCh eps=8, l=3", dict(embed_dim=8, kernel_layers=3)),
    "8": ("SASQuaTCh eps=8, l=3 (listed twice)", dict(embed_dim=8, kernel_layers=3)),
    "9": ("no perceptron, eps=4, l=1", dict(embed_dim=4, kernel_layers=1, use_perceptron=False)),
}

# synthetic comparison: full model, QFT removed, angle encoding + perceptron only
LINES_CASES = {
    "sasquatch": ("SASQuaTCh", {}),
    "no_qft": ("SASQuaTCh (no QFT)", dict(use_qft=False)),
    "baseline": ("perceptron baseline", dict(use_qft=False, kernel_layers=0)),
}


def case_table(task: str) -> dict[str, tuple[str, dict]]:
    return LINES_CASES if task == "lines" else DIGIT_PAIR_CASES


def run_ablation(spec: ExperimentSpec, cases: Sequence[str], out_dir=None, log=None) -> dict[str, list[RunResult]]:
    if not cases:
        raise StructuralError("ablation needs at least one case")
    table = case_table(spec.task)
    unknown = [c for c in cases if c not in table]
    if unknown:
        raise StructuralError(f"unknown cases {unknown}; choose from {list(table)}")
    splits = load_splits(spec)
    out = Path(out_dir) if out_dir is not None else None
    results = {}
    for name in cases:
        case_spec = replace(spec, **table[name][1])
        results[name] = run_experiment(case_spec, splits, None if out is None else out / f"case_{name}", log)
    if out is not None:
        (out / "ablation.txt").write_text(ablation_text(spec.task, results))
    return results


def ablation_text(task: str, results: dict[str, list[RunResult]]) -> str:
    table = case_table(task)
    use_test = task == "mnist_pair"
    header = "case,description,accuracies,mean (std)"
    lines = [header]
    for name, runs in results.items():
        accs = [r.test_accuracy if use_test else r.final.val_accuracy for r in runs]
        joined = " ".join(f"{100 * a:.2f}" for a in accs)
        lines.append(f"{name},{table[name][0]},{joined},{mean_std(accs)}")
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------- argument handling

SPEC_FLAGS = {
    "task": "task", "digits": "digits", "encoding": "encoding", "patch_size": "patch_size",
    "embed_dim": "embed_dim", "layers": "kernel_layers", "depth": "depth", "loss": "loss_kind",
    "epochs": "epochs", "lr": "learning_rate", "batch_size": "batch_size", "seed": "seed",
    "restarts": "num_restarts", "out": "out", "mnist_dir": "mnist_dir", "grad_engine": "gradient_engine",
    "n_train": "n_train", "n_val": "n_val", "data_seed": "data_seed",
}


def _digits(text: str) -> tuple[int, int]:
    parts = [p for p in text.replace(",", " ").split() if p]
    if len(parts) != 2:
        raise argparse.ArgumentTypeError("digits must be two values such as 1,3")
    return int(parts[0]), int(parts[1])


def _add_spec_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file of spec fields; flags override it")
    p.add_argument("--task", choices=TASKS)
    p.add_argument("--digits", type=_digits, help="digit pair, first maps to +1 (e.g. 1,3)")
    p.add_argument("--encoding", choices=("angle", "amplitude"))
    p.add_argument("--patch-size", type=int)
    p.add_argument("--embed-dim", type=int)
    p.add_argument("--layers", type=int, help="kernel layers per block")
    p.add_argument("--depth", type=int, help="stacked QFT-kernel-IQFT blocks")
    p.add_argument("--no-qft", action="store_true")
    p.add_argument("--no-perceptron", action="store_true")
    emb = p.add_mutually_exclusive_group()
    emb.add_argument("--trainable-embedding", dest="trainable_embedding", action="store_true", default=None)
    emb.add_argument("--frozen-embedding", dest="trainable_embedding", action="store_false")
    p.add_argument("--loss", choices=("l1", "soft_margin"))
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--restarts", type=int)
    p.add_argument("--n-train", type=int)
    p.add_argument("--n-val", type=int)
    p.add_argument("--data-seed", type=int)
    p.add_argument("--out")
    p.add_argument("--mnist-dir")
    p.add_argument("--grad-engine", choices=("adjoint", "parameter_shift"))


def spec_from_args(args: argparse.Namespace) -> ExperimentSpec:
    values: dict = {}
    if args.config:
        try:
            values.update(json.loads(Path(args.config).read_text()))
        except json.JSONDecodeError as exc:
            raise FormatError(f"{args.config}: {exc}") from exc
        known = {f.name for f in fields(ExperimentSpec)}
        unknown = set(values) - known
        if unknown:
            raise FormatError(f"{args.config}: unknown keys {sorted(unknown)}")
    for flag, key in SPEC_FLAGS.items():
        value = getattr(args, flag, None)
        if value is not None:
            values[key] = value
    if args.no_qft:
        values["use_qft"] = False
    if args.no_perceptron:
        values["use_perceptron"] = False
    if args.trainable_embedding is not None:
        values["trainable_embedding"] = args.trainable_embedding
    task = values.pop("task", "lines")
    return ExperimentSpec.for_task(task, **values)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sasquatch", description="Quantum kernel self-attention experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="write a synthetic line dataset, or fetch/verify MNIST")
    _add_spec_flags(gen)
    gen.add_argument("--count", type=int, default=500)
    gen.add_argument("--fetch", action="store_true", help="download MNIST into --mnist-dir (opt-in)")
    gen.add_argument("--url", default=MNIST_URL)

    for name, text in (("train", "train with restarts"), ("ablate", "run an ablation sweep")):
        p = sub.add_parser(name, help=text)
        _add_spec_flags(p)
        p.add_argument("-q", "--quiet", action="store_true")
        if name == "ablate":
            p.add_argument("--cases", help="comma-separated case names (default: all)")

    ev = sub.add_parser("eval", help="evaluate a checkpoint")
    _add_spec_flags(ev)
    ev.add_argument("checkpoint")
    ev.add_argument("--data", help="CSV dataset written by 'generate' (lines task)")
    ev.add_argument("--split", choices=("train", "val", "test"), default="val")

    res = sub.add_parser("resources", help="print qubit, parameter and gate counts")
    _add_spec_flags(res)
    res.add_argument("--classes", type=int, default=2)
    res.add_argument("--prep-depth", type=int)
    res.add_argument("--format", choices=("text", "kv"), default="text")
    return parser


# --------------------------------------------------------------------------- commands


def cmd_generate(args, spec: ExperimentSpec) -> int:
    if spec.task == "mnist_pair":
        mnist_dir = spec.mnist_dir or default_mnist_dir()
        status = fetch_mnist(mnist_dir, args.url) if args.fetch else verify_mnist_files(mnist_dir)
        for name, ok in status.items():
            print(f"{name}: {'ok' if ok else 'missing or checksum mismatch'}")
        return 0 if all(status.values()) else 1
    path = Path(spec.out)
    if path.suffix != ".csv":
        path.mkdir(parents=True, exist_ok=True)
        path = path / f"lines_{args.count}_seed{spec.seed}.csv"
    write_dataset(path, generate_lines(args.count, spec.seed))
    print(path)
    return 0


def cmd_train(args, spec: ExperimentSpec) -> int:
    log = None if args.quiet else (lambda msg: print(msg, flush=True))
    run_experiment(spec, out_dir=spec.out, log=log)
    print((Path(spec.out) / "summary.txt").read_text(), end="")
    return 0


def cmd_ablate(args, spec: ExperimentSpec) -> int:
    table = case_table(spec.task)
    cases = [c.strip() for c in args.cases.split(",")] if args.cases else list(table)
    log = None if args.quiet else (lambda msg: print(msg, flush=True))
    run_ablation(spec, cases, spec.out, log)
    print((Path(spec.out) / "ablation.txt").read_text(), end="")
    return 0


def cmd_eval(args, spec: ExperimentSpec) -> int:
    config, params = load_checkpoint(args.checkpoint)
    if args.data:
        dataset = read_dataset(args.data)
    else:
        splits = load_splits(spec)
        dataset = {"train": splits.train, "val": splits.val, "test": splits.test}[args.split]
        if dataset is None:
            raise StructuralError(f"task {spec.task} has no {args.split} split")
    loss, accuracy = evaluate(config, params, dataset, spec.loss_kind)
    print(f"items {len(dataset)}")
    print(f"loss {format_float(loss)}")
    print(f"accuracy {format_float(accuracy)}")
    return 0


def cmd_resources(args, spec: ExperimentSpec) -> int:
    result = estimate(spec.model_config(), args.classes, args.prep_depth)
    print(result.report() if args.format == "text" else result.key_values(), end="")
    return 0


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "ablate": cmd_ablate,
    "eval": cmd_eval,
    "resources": cmd_resources,
}


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        spec = spec_from_args(args)
        return COMMANDS[args.command](args, spec)
    except (SasquatchError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
