"""Long-tailed datasets: construction, synthetic mixtures, CIFAR ingestion, file IO.

Labels are stored 0-indexed (``0 .. K-1``) throughout the package.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

DATASET_MAGIC = b"ICCLDS1"
_DTYPE_CODES = {1: np.uint8, 2: np.float64}

CIFAR_RECORD = 1 + 3 * 32 * 32
CIFAR10_MEAN = (0.4914, 0.4822, 0.4465)
CIFAR10_STD = (0.2470, 0.2435, 0.2616)


class DatasetError(ValueError):
    pass


@dataclass
class LongTailedDataset:
    x: np.ndarray  # (n, *example_shape)
    y: np.ndarray  # (n,) int64 labels
    num_classes: int

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=np.int64)
        if len(self.x) != len(self.y):
            raise DatasetError(f"{len(self.x)} inputs but {len(self.y)} labels")
        if self.y.size and (self.y.min() < 0 or self.y.max() >= self.num_classes):
            raise DatasetError(f"labels must lie in [0, {self.num_classes})")

    def __len__(self):
        return len(self.y)

    @property
    def example_shape(self):
        return tuple(self.x.shape[1:])

    @property
    def class_counts(self):
        return np.bincount(self.y, minlength=self.num_classes)

    @property
    def imbalance_ratio(self):
        counts = self.class_counts
        if counts.min() == 0:
            return math.inf
        return float(counts.max() / counts.min())

    def indices_by_class(self):
        return [np.flatnonzero(self.y == k) for k in range(self.num_classes)]

    def subset(self, idx):
        return LongTailedDataset(self.x[idx], self.y[idx], self.num_classes)


def exponential_profile(n_max, num_classes, imbalance_ratio):
    """Per-class counts ``round(n_max * ratio ** (-k / (K - 1)))``, half rounded up."""
    if imbalance_ratio < 1:
        raise DatasetError(f"imbalance ratio must be >= 1, got {imbalance_ratio}")
    if imbalance_ratio > n_max:
        raise DatasetError(
            f"imbalance ratio {imbalance_ratio} exceeds n_max={n_max}; the rarest class would be empty"
        )
    if num_classes == 1:
        return np.array([n_max], dtype=np.int64)
    k = np.arange(num_classes)
    counts = np.floor(n_max * float(imbalance_ratio) ** (-k / (num_classes - 1)) + 0.5).astype(np.int64)
    if counts.min() < 1:
        raise DatasetError(f"imbalance ratio {imbalance_ratio} leaves a class with no examples")
    return counts


def build_longtailed(base, imbalance_ratio, seed=0, profile="exponential"):
    """Subsample a class-balanced ``base`` dataset to an exponential long tail.

    Class 0 keeps the most examples. Within each class the kept examples are a
    seeded draw without replacement, returned in their original order.
    """
    if profile != "exponential":
        raise DatasetError(f"unsupported long-tail profile {profile!r}")
    counts = base.class_counts
    if counts.min() != counts.max():
        raise DatasetError(f"base dataset must be class-balanced, got counts {counts.tolist()}")
    target = exponential_profile(int(counts[0]), base.num_classes, imbalance_ratio)
    rng = np.random.default_rng(seed)
    keep = []
    for k, members in enumerate(base.indices_by_class()):
        chosen = rng.choice(len(members), size=int(target[k]), replace=False)
        keep.append(members[np.sort(chosen)])
    idx = np.sort(np.concatenate(keep))
    return base.subset(idx)


@dataclass
class SyntheticSpec:
    num_classes: int = 10
    dim: int = 32
    n_max: int = 1210
    imbalance_ratio: float = 100.0
    test_per_class: int = 200
    mean_scale: float = 1.0
    noise: float = 1.0
    modes_per_class: int = 1
    mode_spread: float = 0.0


def make_gaussian_mixture(spec, rng):
    """Balanced train/test draws from a Gaussian mixture.

    Each class owns ``modes_per_class`` centres: a class mean at radius
    ``mean_scale`` plus per-mode offsets of size ``mode_spread``. Samples add
    isotropic noise ``noise``.
    """
    k, d = spec.num_classes, spec.dim
    means = rng.standard_normal((k, d))
    means *= spec.mean_scale / np.linalg.norm(means, axis=1, keepdims=True)
    offsets = rng.standard_normal((k, spec.modes_per_class, d))
    offsets *= spec.mode_spread / np.sqrt(d)
    centres = means[:, None, :] + offsets

    def draw(per_class):
        y = np.repeat(np.arange(k), per_class)
        mode = rng.integers(0, spec.modes_per_class, size=y.size)
        x = centres[y, mode] + spec.noise * rng.standard_normal((y.size, d))
        return LongTailedDataset(x, y, k)

    return draw(spec.n_max), draw(spec.test_per_class)


def synthetic_longtailed(spec, seed):
    """Long-tailed train split and balanced test split from one seed."""
    rng = np.random.default_rng(seed)
    base, test = make_gaussian_mixture(spec, rng)
    train = build_longtailed(base, spec.imbalance_ratio, seed=rng.integers(2**32))
    return train, test


def read_cifar_binary(path):
    """Read one CIFAR-10 binary batch into (uint8 images (n, 3, 32, 32), labels)."""
    raw = Path(path).read_bytes()
    if len(raw) % CIFAR_RECORD:
        raise DatasetError(f"{path}: size {len(raw)} is not a multiple of the {CIFAR_RECORD}-byte record")
    rec = np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
    return rec[:, 1:].reshape(-1, 3, 32, 32).copy(), rec[:, 0].astype(np.int64)


def load_cifar_dir(directory, split="train", num_classes=10):
    d = Path(directory)
    if not d.is_dir():
        raise DatasetError(f"{d} is not a directory")
    names = sorted(d.glob("data_batch_*.bin")) if split == "train" else [d / "test_batch.bin"]
    names = [n for n in names if n.exists()]
    if not names:
        raise DatasetError(f"no CIFAR {split} batches found in {d}")
    parts = [read_cifar_binary(n) for n in names]
    x = np.concatenate([p[0] for p in parts])
    y = np.concatenate([p[1] for p in parts])
    return LongTailedDataset(x, y, num_classes)


def standardize_images(x, mean=CIFAR10_MEAN, std=CIFAR10_STD):
    """uint8 (n, C, H, W) -> float64 scaled to [0, 1] then per-channel standardized."""
    x = np.asarray(x, dtype=np.float64) / 255.0
    m = np.asarray(mean, dtype=np.float64).reshape(1, -1, 1, 1)
    s = np.asarray(std, dtype=np.float64).reshape(1, -1, 1, 1)
    return (x - m) / s


def write_dataset(path, ds):
    """Write the self-describing dataset file.

    Header: magic, u32 K, K x u32 class counts, u32 dtype code (1=u8, 2=f64),
    u32 rank, u32 dims of one example, u32 n. Body: per example a u32 label
    followed by its values.
    """
    x = np.asarray(ds.x)
    code = 1 if x.dtype == np.uint8 else 2
    x = x.astype("<f8") if code == 2 else x
    counts = ds.class_counts
    shape = ds.example_shape
    head = [DATASET_MAGIC, struct.pack("<I", ds.num_classes), struct.pack(f"<{ds.num_classes}I", *counts)]
    head += [struct.pack("<II", code, len(shape)), struct.pack(f"<{len(shape)}I", *shape)]
    head.append(struct.pack("<I", len(ds)))
    labels = ds.y.astype("<u4").reshape(-1, 1).view(np.uint8)
    body = x.reshape(len(ds), -1).view(np.uint8)
    rows = np.concatenate([labels, body], axis=1) if len(ds) else np.zeros((0, 4), np.uint8)
    Path(path).write_bytes(b"".join(head) + rows.tobytes())


def read_dataset(path):
    buf = Path(path).read_bytes()
    if not buf.startswith(DATASET_MAGIC):
        raise DatasetError(f"{path}: not an ICCL dataset file")
    pos = len(DATASET_MAGIC)

    def unpack(fmt):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(buf):
            raise DatasetError(f"{path}: truncated header")
        vals = struct.unpack_from(fmt, buf, pos)
        pos += size
        return vals

    (k,) = unpack("<I")
    counts = np.array(unpack(f"<{k}I"), dtype=np.int64)
    code, rank = unpack("<II")
    if code not in _DTYPE_CODES:
        raise DatasetError(f"{path}: unknown value dtype code {code}")
    shape = unpack(f"<{rank}I")
    (n,) = unpack("<I")
    dtype = np.dtype(_DTYPE_CODES[code]).newbyteorder("<")
    width = 4 + int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
    if len(buf) - pos != n * width:
        raise DatasetError(f"{path}: expected {n * width} body bytes, found {len(buf) - pos}")
    rows = np.frombuffer(buf, dtype=np.uint8, offset=pos).reshape(n, width)
    y = rows[:, :4].copy().view("<u4").reshape(n).astype(np.int64)
    x = rows[:, 4:].copy().view(dtype).reshape((n, *shape))
    ds = LongTailedDataset(x.astype(_DTYPE_CODES[code]), y, k)
    if not np.array_equal(ds.class_counts, counts):
        raise DatasetError(f"{path}: header counts {counts.tolist()} disagree with stored labels")
    return ds
