"""Synthetic line images and MNIST (IDX) ingestion."""

from __future__ import annotations

import csv
import hashlib
import io
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, StructuralError

LINE_MAGNITUDE = 0.75
NOISE_LEVEL = 0.25
IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

MNIST_FILES = {
    "train_images": "train-images-idx3-ubyte",
    "train_labels": "train-labels-idx1-ubyte",
    "test_images": "t10k-images-idx3-ubyte",
    "test_labels": "t10k-labels-idx1-ubyte",
}
# md5 of the uncompressed canonical files
MNIST_MD5 = {
    "train-images-idx3-ubyte": "6bbc9ace898e44ae57da46a324031adb",
    "train-labels-idx1-ubyte": "a25bea736e30d166cdddb491f175f624",
    "t10k-images-idx3-ubyte": "2646ac647ad5339dbf082846283269ea",
    "t10k-labels-idx1-ubyte": "27ae3e4e09519cfbb04c329615203637",
}


@dataclass
class LabeledImage:
    image: np.ndarray
    label: int


@dataclass
class Dataset:
    images: np.ndarray  # (n, H, W), values in [0, 1]
    labels: np.ndarray  # (n,), values in {-1, +1}
    class_map: str = ""

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=float)
        self.labels = np.asarray(self.labels, dtype=int)
        if self.images.ndim != 3 or self.images.shape[0] != self.labels.shape[0]:
            raise StructuralError("images must be (n, H, W) with one label each")
        if not np.all(np.isin(self.labels, (-1, 1))):
            raise StructuralError("labels must be -1 or +1")

    def __len__(self) -> int:
        return self.labels.shape[0]

    def __getitem__(self, i: int) -> LabeledImage:
        return LabeledImage(self.images[i], int(self.labels[i]))

    def subset(self, index) -> Dataset:
        index = np.asarray(index, dtype=int)
        return Dataset(self.images[index], self.labels[index], self.class_map)

    def flipped(self) -> Dataset:
        return Dataset(self.images, -self.labels, self.class_map)


@dataclass
class RawDigits:
    images: np.ndarray  # (n, 28, 28) float in [0, 1]
    digits: np.ndarray  # (n,) uint8 in 0..9

    def __len__(self) -> int:
        return self.digits.shape[0]


# ---------------------------------------------------------------------------- synthetic lines


def line_positions(size: int = 4) -> dict[int, list[tuple[tuple[int, int], tuple[int, int]]]]:
    """All placements of a two-pixel line; +1 horizontal, -1 vertical."""
    horizontal = [((r, c), (r, c + 1)) for r in range(size) for c in range(size - 1)]
    vertical = [((r, c), (r + 1, c)) for r in range(size - 1) for c in range(size)]
    return {1: horizontal, -1: vertical}


def generate_lines(count: int, seed: int, size: int = 4) -> Dataset:
    """Noisy 4x4 images holding one horizontal (+1) or vertical (-1) line."""
    if count < 0 or count % 2:
        raise StructuralError("count must be a non-negative even number (balanced classes)")
    rng = np.random.default_rng(seed)
    placements = line_positions(size)
    labels = np.array([1] * (count // 2) + [-1] * (count // 2))
    rng.shuffle(labels)
    images = np.zeros((count, size, size))
    for i, label in enumerate(labels):
        options = placements[int(label)]
        (r0, c0), (r1, c1) = options[rng.integers(len(options))]
        images[i, r0, c0] = LINE_MAGNITUDE
        images[i, r1, c1] = LINE_MAGNITUDE
    images += rng.uniform(0.0, NOISE_LEVEL, size=images.shape)
    return Dataset(images, labels, "horizontal=+1, vertical=-1")


def dataset_csv(dataset: Dataset) -> str:
    """One record per image: flattened pixels (row-major) then the label."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    n_pix = dataset.images[0].size if len(dataset) else 0
    writer.writerow([f"p{i}" for i in range(n_pix)] + ["label"])
    for img, label in zip(dataset.images, dataset.labels):
        writer.writerow([format(float(v), ".17g") for v in img.reshape(-1)] + [int(label)])
    return buf.getvalue()


def write_dataset(path, dataset: Dataset) -> None:
    Path(path).write_text(dataset_csv(dataset))


def read_dataset(path, class_map: str = "") -> Dataset:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][-1] != "label":
        raise FormatError(f"{path}: missing header")
    n_pix = len(rows[0]) - 1
    side = int(round(n_pix**0.5))
    if side * side != n_pix:
        raise FormatError(f"{path}: {n_pix} pixels is not a square image")
    try:
        pixels = np.array([[float(v) for v in r[:-1]] for r in rows[1:]], dtype=float)
        labels = np.array([int(r[-1]) for r in rows[1:]], dtype=int)
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from exc
    return Dataset(pixels.reshape(-1, side, side), labels, class_map)


# ---------------------------------------------------------------------------- MNIST


def _read_idx(path, magic: int, ndim: int) -> np.ndarray:
    data = Path(path).read_bytes()
    header = 4 + 4 * ndim
    if len(data) < header:
        raise FormatError(f"{path}: truncated IDX header")
    (found,) = struct.unpack(">I", data[:4])
    if found != magic:
        raise FormatError(f"{path}: bad magic 0x{found:08x}, expected 0x{magic:08x}")
    dims = struct.unpack(">" + "I" * ndim, data[4:header])
    expected = int(np.prod(dims))
    if len(data) - header != expected:
        raise FormatError(f"{path}: expected {expected} data bytes, found {len(data) - header}")
    return np.frombuffer(data, dtype=np.uint8, offset=header).reshape(dims)


def load_mnist_idx(images_path, labels_path) -> RawDigits:
    images = _read_idx(images_path, IDX_IMAGES_MAGIC, 3)
    labels = _read_idx(labels_path, IDX_LABELS_MAGIC, 1)
    if images.shape[0] != labels.shape[0]:
        raise FormatError(f"{images.shape[0]} images but {labels.shape[0]} labels")
    if labels.size and labels.max() > 9:
        raise FormatError("label values must be digits 0-9")
    return RawDigits(images.astype(float) / 255.0, labels.copy())


def load_mnist_split(mnist_dir, split: str) -> RawDigits:
    if split not in ("train", "test"):
        raise StructuralError("split must be 'train' or 'test'")
    d = Path(mnist_dir)
    return load_mnist_idx(d / MNIST_FILES[f"{split}_images"], d / MNIST_FILES[f"{split}_labels"])


def verify_mnist_files(mnist_dir) -> dict[str, bool]:
    """md5 check of the four canonical files (missing files report False)."""
    out = {}
    for name, digest in MNIST_MD5.items():
        path = Path(mnist_dir) / name
        out[name] = path.exists() and hashlib.md5(path.read_bytes()).hexdigest() == digest
    return out


def filter_digit_pair(raw: RawDigits, digit_a: int, digit_b: int) -> Dataset:
    """Keep two digits; ``digit_a`` -> +1, ``digit_b`` -> -1."""
    if digit_a == digit_b or not (0 <= digit_a <= 9 and 0 <= digit_b <= 9):
        raise StructuralError("digits must be distinct values in 0-9")
    keep = (raw.digits == digit_a) | (raw.digits == digit_b)
    if not keep.any():
        raise StructuralError(f"no images of digits {digit_a} or {digit_b}")
    labels = np.where(raw.digits[keep] == digit_a, 1, -1)
    return Dataset(raw.images[keep], labels, f"{digit_a}=+1, {digit_b}=-1")


def subsample(dataset: Dataset, n_train: int, n_val: int, seed: int) -> tuple[Dataset, Dataset]:
    """Disjoint uniform samples without replacement."""
    if n_train < 1 or n_val < 0:
        raise StructuralError("need n_train >= 1 and n_val >= 0")
    if n_train + n_val > len(dataset):
        raise StructuralError(f"requested {n_train + n_val} items from a dataset of {len(dataset)}")
    order = np.random.default_rng(seed).permutation(len(dataset))
    return dataset.subset(order[:n_train]), dataset.subset(order[n_train:n_train + n_val])
