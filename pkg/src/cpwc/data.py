"""Datasets: the CIFAR binary format and a synthetic context-only task."""
from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

# per-channel statistics of the respective training sets, pixels in [0, 1]
CIFAR10_MEAN = (0.4914, 0.4822, 0.4465)
CIFAR10_STD = (0.2470, 0.2435, 0.2616)
CIFAR100_MEAN = (0.5071, 0.4865, 0.4409)
CIFAR100_STD = (0.2673, 0.2564, 0.2762)

CIFAR_FILES = {
    "cifar10": (["data_batch_1.bin", "data_batch_2.bin", "data_batch_3.bin",
                 "data_batch_4.bin", "data_batch_5.bin"], ["test_batch.bin"]),
    "cifar100": (["train.bin"], ["test.bin"]),
}
CIFAR_SUBDIRS = {"cifar10": "cifar-10-batches-bin", "cifar100": "cifar-100-binary"}
PIXELS = 32 * 32 * 3


class CifarFormatError(ValueError):
    pass


@dataclass
class Dataset:
    images: np.ndarray   # (N, C, H, W) normalized
    labels: np.ndarray   # (N,) int64
    classes: int
    split: str = "train"

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise ValueError(f"{len(self.images)} images but {len(self.labels)} labels")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.classes):
            raise ValueError(f"labels must lie in [0, {self.classes})")

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, n: int, seed: int = 0) -> "Dataset":
        """A seeded random subset of ``n`` examples."""
        if n >= len(self):
            return self
        idx = np.sort(np.random.default_rng(seed).choice(len(self), n, replace=False))
        return Dataset(self.images[idx], self.labels[idx], self.classes, self.split)


def read_cifar_records(path, flavor: str = "cifar100", label: str = "fine"):
    """Parse one CIFAR binary file into raw ``uint8`` images and labels.

    CIFAR-10 records are ``<label><3072 pixels>``; CIFAR-100 records are
    ``<coarse><fine><3072 pixels>``. Pixels are channel-planar R, G, B, each
    a row-major 32x32 plane.
    """
    if flavor not in CIFAR_FILES:
        raise ValueError(f"unknown CIFAR flavor {flavor!r}")
    n_labels = 2 if flavor == "cifar100" else 1
    n_classes = 100 if flavor == "cifar100" else 10
    record = n_labels + PIXELS
    try:
        raw = np.fromfile(path, dtype=np.uint8)
    except FileNotFoundError:
        raise FileNotFoundError(f"missing CIFAR file: {path}") from None
    if raw.size % record:
        good = raw.size - raw.size % record
        raise CifarFormatError(
            f"{path}: truncated record at byte offset {good} "
            f"(file length {raw.size} is not a multiple of the {record}-byte record size)")
    rows = raw.reshape(-1, record)
    if flavor == "cifar100":
        if label not in ("fine", "coarse"):
            raise ValueError(f"label must be 'fine' or 'coarse', got {label!r}")
        labels = rows[:, 1] if label == "fine" else rows[:, 0]
        n_classes = 100 if label == "fine" else 20
        coarse_bad = np.flatnonzero(rows[:, 0] >= 20)
        if coarse_bad.size:
            i = int(coarse_bad[0])
            raise CifarFormatError(f"{path}: record {i} has coarse label {rows[i, 0]} >= 20")
    else:
        labels = rows[:, 0]
    bad = np.flatnonzero(labels >= n_classes)
    if bad.size:
        i = int(bad[0])
        raise CifarFormatError(f"{path}: record {i} has label {labels[i]} >= {n_classes}")
    images = rows[:, n_labels:].reshape(-1, 3, 32, 32)
    return images, labels.astype(np.int64), n_classes


def normalize_cifar(images: np.ndarray, flavor: str, dtype=np.float32) -> np.ndarray:
    mean, std = (CIFAR100_MEAN, CIFAR100_STD) if flavor == "cifar100" else (CIFAR10_MEAN, CIFAR10_STD)
    x = images.astype(np.float64) / 255.0
    x = (x - np.array(mean)[:, None, None]) / np.array(std)[:, None, None]
    return x.astype(dtype)


def _find_dir(path, flavor):
    names = CIFAR_FILES[flavor][0]
    for cand in (path, os.path.join(path, CIFAR_SUBDIRS[flavor])):
        if os.path.exists(os.path.join(cand, names[0])):
            return cand
    return path


def load_cifar(path, flavor: str = "cifar100", label: str = "fine", dtype=np.float32):
    """Load the train and test splits of a CIFAR binary distribution.

    ``path`` may point at the extracted directory (``cifar-100-binary``) or
    its parent.
    """
    if flavor not in CIFAR_FILES:
        raise ValueError(f"unknown CIFAR flavor {flavor!r}")
    root = _find_dir(os.fspath(path), flavor)
    out = []
    for split, names in zip(("train", "val"), CIFAR_FILES[flavor]):
        parts = [read_cifar_records(os.path.join(root, f), flavor, label) for f in names]
        images = np.concatenate([p[0] for p in parts])
        labels = np.concatenate([p[1] for p in parts])
        out.append(Dataset(normalize_cifar(images, flavor, dtype), labels, parts[0][2], split))
    return out[0], out[1]


# Dot-pair displacements; class k places pairs of bright pixels offset by
# OFFSETS[k]. Every class uses the same number of equally bright pixels, so
# no statistic of individual pixel values separates the classes.
OFFSETS = ((0, 4), (4, 0), (4, 4), (4, -4), (2, 4), (4, 2), (4, -2), (2, -4))
SYNTH_NOISE = 0.1


def synth_context_dataset(seed: int, n: int, classes: int = 4, size: int = 12,
                          pairs: int = 3, split: str = "train",
                          dtype=np.float32) -> Dataset:
    """Images whose class is the orientation of the dot pairs they contain.

    Each image holds ``pairs`` copies of its class's two-dot motif at random
    positions on a low-noise background. Labels are balanced exactly
    (``n // classes`` or one more per class).
    """
    if not 1 <= classes <= len(OFFSETS):
        raise ValueError(f"classes must be in [1, {len(OFFSETS)}]")
    if n < classes:
        raise ValueError(f"need n >= classes, got n={n}, classes={classes}")
    if size < 6:
        raise ValueError("image size must be at least 6")
    rng = np.random.default_rng(seed)
    labels = rng.permutation(np.arange(n) % classes)
    images = rng.normal(0.0, SYNTH_NOISE, size=(n, 1, size, size))
    for i, k in enumerate(labels):
        dy, dx = OFFSETS[k]
        ys = rng.integers(0, size - dy, size=pairs)
        xs = rng.integers(max(0, -dx), size - max(0, dx), size=pairs)
        images[i, 0, ys, xs] = 1.0
        images[i, 0, ys + dy, xs + dx] = 1.0
    # fixed normalization from the generator's nominal statistics
    density = 2 * pairs / size ** 2
    mean = density
    std = np.sqrt(density * (1 - density) + SYNTH_NOISE ** 2)
    images = (images - mean) / std
    return Dataset(images.astype(dtype), labels.astype(np.int64), classes, split)
