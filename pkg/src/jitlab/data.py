"""Datasets, the CIFAR-10 binary batch format, and retain/forget partitioning."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from jitlab.errors import ConfigError, FormatError

CIFAR_SIDE = 32
CIFAR_PIXELS = 3 * CIFAR_SIDE * CIFAR_SIDE
CIFAR_RECORD = 1 + CIFAR_PIXELS
CIFAR_TRAIN_FILES = tuple(f"data_batch_{i}.bin" for i in range(1, 6))
CIFAR_TEST_FILE = "test_batch.bin"


@dataclass
class LabeledDataset:
    inputs: np.ndarray
    labels: np.ndarray
    n_classes: int
    name: str = "data"
    subclasses: np.ndarray | None = None
    image_shape: tuple[int, int, int] | None = None

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.inputs.ndim != 2:
            raise ConfigError(f"inputs must be a 2-D array, got shape {self.inputs.shape}")
        if len(self.inputs) != len(self.labels):
            raise ConfigError("inputs and labels differ in length")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise ConfigError("labels outside [0, n_classes)")
        if self.subclasses is not None:
            self.subclasses = np.asarray(self.subclasses, dtype=np.int64)
            if len(self.subclasses) != len(self.labels):
                raise ConfigError("subclass labels differ in length from labels")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def dim(self) -> int:
        return self.inputs.shape[1]

    def subset(self, idx, name: str | None = None) -> "LabeledDataset":
        idx = np.asarray(idx, dtype=np.int64)
        return LabeledDataset(
            self.inputs[idx],
            self.labels[idx],
            self.n_classes,
            name or self.name,
            None if self.subclasses is None else self.subclasses[idx],
            self.image_shape,
        )

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.n_classes)


# -- synthetic generators -----------------------------------------------------
def make_blobs(n_per_class: int, means: Sequence[Sequence[float]], std: float, seed: int,
               subclass_offsets: Sequence[Sequence[float]] | None = None) -> LabeledDataset:
    """Isotropic Gaussian clouds, one per mean.

    With ``subclass_offsets`` each class is split evenly into sub-clouds centred
    at ``mean + offset``; sub-cloud j of class k gets subclass id
    ``k * len(offsets) + j``.
    """
    means = np.asarray(means, dtype=np.float64)
    if means.ndim != 2 or len(means) < 2:
        raise ConfigError("make_blobs needs at least two mean vectors")
    if std < 0:
        raise ConfigError("std must be non-negative")
    rng = np.random.default_rng(seed)
    k, d = means.shape
    centres = np.repeat(means, n_per_class, axis=0)
    labels = np.repeat(np.arange(k), n_per_class)
    subclasses = None
    if subclass_offsets is not None:
        offs = np.asarray(subclass_offsets, dtype=np.float64)
        j = np.tile(np.arange(n_per_class) % len(offs), k)
        centres = centres + offs[j]
        subclasses = labels * len(offs) + j
    x = centres + std * rng.standard_normal((k * n_per_class, d))
    return LabeledDataset(x, labels, k, "blobs", subclasses)


def make_moons(n_per_class: int, noise_std: float, seed: int) -> LabeledDataset:
    """Two interleaved unit half-circles with optional Gaussian jitter."""
    if noise_std < 0:
        raise ConfigError("noise_std must be non-negative")
    rng = np.random.default_rng(seed)
    t = np.linspace(0.0, np.pi, n_per_class)
    upper = np.column_stack([np.cos(t), np.sin(t)])
    lower = np.column_stack([1.0 - np.cos(t), 0.5 - np.sin(t)])
    x = np.vstack([upper, lower])
    x = x + noise_std * rng.standard_normal(x.shape)
    labels = np.repeat([0, 1], n_per_class)
    return LabeledDataset(x, labels, 2, "moons")


def make_logistic1d(n: int, half_width: float, slope: float, seed: int) -> LabeledDataset:
    """1-D two-class data with P(y=1 | x) = sigmoid(slope * x), x ~ U(-w, w).

    Every draw (x, y) is paired with its mirror (-x, 1 - y), so the sample is
    symmetric about the origin and a fitted sigmoid is centred near zero.
    """
    if n < 2 or n % 2:
        raise ConfigError("n must be a positive even count")
    if not half_width > 0:
        raise ConfigError("half_width must be positive")
    rng = np.random.default_rng(seed)
    x = rng.uniform(-half_width, half_width, size=n // 2)
    y = (rng.random(n // 2) < 1.0 / (1.0 + np.exp(-slope * x))).astype(np.int64)
    return LabeledDataset(np.concatenate([x, -x]).reshape(-1, 1), np.concatenate([y, 1 - y]), 2, "logistic1d")


# -- CIFAR-10 binary batches ------------------------------------------------
def read_cifar_records(path) -> tuple[np.ndarray, np.ndarray]:
    """Raw (labels uint8 [n], pixels uint8 [n, 3072]) from one binary batch file."""
    raw = np.fromfile(path, dtype=np.uint8)
    if raw.size % CIFAR_RECORD:
        raise FormatError(f"{path}: size {raw.size} is not a multiple of {CIFAR_RECORD}")
    records = raw.reshape(-1, CIFAR_RECORD)
    labels = records[:, 0].copy()
    if labels.size and labels.max() > 9:
        raise FormatError(f"{path}: label byte {int(labels.max())} > 9")
    return labels, records[:, 1:].copy()


def write_cifar_records(path, labels, pixels) -> None:
    """Inverse of read_cifar_records; pixels are channel-planar uint8 rows."""
    labels = np.asarray(labels, dtype=np.uint8).reshape(-1, 1)
    pixels = np.asarray(pixels, dtype=np.uint8).reshape(len(labels), CIFAR_PIXELS)
    np.hstack([labels, pixels]).tofile(path)


def _cifar_files(path: Path, split: str) -> list[Path]:
    if path.is_file():
        return [path]
    names = CIFAR_TRAIN_FILES if split == "train" else (CIFAR_TEST_FILE,)
    for base in (path, path / "cifar-10-batches-bin"):
        files = [base / n for n in names]
        if all(f.is_file() for f in files):
            return files
    raise FileNotFoundError(f"no CIFAR-10 {split} batch files under {path}")


def load_cifar10(path, subsample_per_class: int | None, seed: int, split: str = "train") -> LabeledDataset:
    """Load CIFAR-10 binary batches, scale pixels to [0, 1], subsample per class.

    ``path`` is either a single batch file or a directory holding the
    standard ``data_batch_*.bin`` / ``test_batch.bin`` files.
    """
    labels, pixels = [], []
    for f in _cifar_files(Path(path), split):
        lab, pix = read_cifar_records(f)
        labels.append(lab)
        pixels.append(pix)
    y = np.concatenate(labels).astype(np.int64)
    px = np.concatenate(pixels)
    if subsample_per_class is not None:
        rng = np.random.default_rng(seed)
        keep = []
        for c in range(10):
            members = np.flatnonzero(y == c)
            if len(members) < subsample_per_class:
                raise ConfigError(f"class {c} has {len(members)} records, {subsample_per_class} requested")
            keep.append(rng.choice(members, size=subsample_per_class, replace=False))
        idx = np.sort(np.concatenate(keep))
        y, px = y[idx], px[idx]
    return LabeledDataset(px.astype(np.float64) / 255.0, y, 10, f"cifar10-{split}",
                          image_shape=(3, CIFAR_SIDE, CIFAR_SIDE))


# -- CSV export -------------------------------------------------------------
def to_csv(data: LabeledDataset, path) -> None:
    header = [f"x{i}" for i in range(data.dim)] + ["label"]
    if data.subclasses is not None:
        header.append("subclass")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i in range(len(data)):
            row = [repr(float(v)) for v in data.inputs[i]] + [int(data.labels[i])]
            if data.subclasses is not None:
                row.append(int(data.subclasses[i]))
            w.writerow(row)


def from_csv(path, n_classes: int | None = None, name: str | None = None) -> LabeledDataset:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or "label" not in rows[0]:
        raise FormatError(f"{path}: missing header with a label column")
    header = rows[0]
    li = header.index("label")
    si = header.index("subclass") if "subclass" in header else None
    body = rows[1:]
    try:
        x = np.array([[float(v) for v in r[:li]] for r in body], dtype=np.float64).reshape(len(body), li)
        y = np.array([int(r[li]) for r in body], dtype=np.int64)
        sub = None if si is None else np.array([int(r[si]) for r in body], dtype=np.int64)
    except (ValueError, IndexError) as exc:
        raise FormatError(f"{path}: {exc}") from None
    k = n_classes if n_classes is not None else (int(y.max()) + 1 if len(y) else 1)
    return LabeledDataset(x, y, k, name or Path(path).stem, sub)


# -- forgetting ---------------------------------------------------------------
FORGET_KINDS = ("full_class", "sub_class", "random", "explicit")


@dataclass(frozen=True)
class ForgetSpec:
    """Which samples to forget: a class, a subclass, a seeded random draw or explicit indices."""

    kind: str
    target: int | None = None
    count: int | None = None
    seed: int | None = None
    indices: tuple[int, ...] = field(default_factory=tuple)

    @classmethod
    def full_class(cls, c: int) -> "ForgetSpec":
        return cls("full_class", target=c)

    @classmethod
    def sub_class(cls, s: int) -> "ForgetSpec":
        return cls("sub_class", target=s)

    @classmethod
    def random(cls, count: int, seed: int) -> "ForgetSpec":
        return cls("random", count=count, seed=seed)

    @classmethod
    def explicit(cls, indices: Sequence[int]) -> "ForgetSpec":
        return cls("explicit", indices=tuple(int(i) for i in indices))

    @classmethod
    def parse(cls, text: str) -> "ForgetSpec":
        """Parse ``full_class:C``, ``sub_class:S``, ``random:COUNT[:SEED]`` or ``explicit:i,j,...``."""
        kind, _, rest = text.strip().partition(":")
        args = rest.split(":") if rest else []
        try:
            if kind in ("full_class", "sub_class") and len(args) == 1:
                return cls(kind, target=int(args[0]))
            if kind == "random" and len(args) in (1, 2):
                return cls.random(int(args[0]), int(args[1]) if len(args) == 2 else 0)
            if kind == "explicit" and len(args) == 1:
                return cls.explicit(int(v) for v in args[0].split(",") if v)
        except ValueError:
            pass
        raise ConfigError(
            f"bad forget spec {text!r}; expected full_class:C, sub_class:S, random:N[:SEED] or explicit:i,j,..."
        )

    def describe(self) -> str:
        if self.kind in ("full_class", "sub_class"):
            return f"{self.kind}:{self.target}"
        if self.kind == "random":
            return f"random:{self.count}:{self.seed}"
        return "explicit:" + ",".join(str(i) for i in self.indices)


@dataclass
class ForgetPartition:
    retain: LabeledDataset
    forget: LabeledDataset
    spec: ForgetSpec
    retain_idx: np.ndarray
    forget_idx: np.ndarray


def forget_indices(data: LabeledDataset, spec: ForgetSpec) -> np.ndarray:
    n = len(data)
    if spec.kind == "full_class":
        if spec.target is None or not 0 <= spec.target < data.n_classes or not np.any(data.labels == spec.target):
            raise ConfigError(f"class {spec.target} is absent from {data.name}")
        return np.flatnonzero(data.labels == spec.target)
    if spec.kind == "sub_class":
        if data.subclasses is None or not np.any(data.subclasses == spec.target):
            raise ConfigError(f"subclass {spec.target} is absent from {data.name}")
        return np.flatnonzero(data.subclasses == spec.target)
    if spec.kind == "random":
        if spec.count is None or not 0 <= spec.count <= n:
            raise ConfigError(f"cannot draw {spec.count} of {n} samples")
        rng = np.random.default_rng(spec.seed)
        return np.sort(rng.choice(n, size=spec.count, replace=False))
    if spec.kind == "explicit":
        idx = np.asarray(spec.indices, dtype=np.int64)
        if len(np.unique(idx)) != len(idx):
            raise ConfigError("explicit forget indices must be unique")
        if len(idx) and (idx.min() < 0 or idx.max() >= n):
            raise ConfigError("explicit forget index out of range")
        return np.sort(idx)
    raise ConfigError(f"unknown forget kind {spec.kind!r}")


def split_forget(data: LabeledDataset, spec: ForgetSpec) -> ForgetPartition:
    """Split ``data`` into retain and forget sets; both keep dataset order."""
    f_idx = forget_indices(data, spec)
    mask = np.ones(len(data), dtype=bool)
    mask[f_idx] = False
    r_idx = np.flatnonzero(mask)
    return ForgetPartition(
        data.subset(r_idx, f"{data.name}-retain"),
        data.subset(f_idx, f"{data.name}-forget"),
        spec,
        r_idx,
        f_idx,
    )
