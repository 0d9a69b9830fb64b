"""Dataset ingestion: CIFAR-10 binary batches and a seeded synthetic
generator used as the fast acceptance dataset.

Images are float32 NCHW in [0,1]; every example keeps a stable per-index id
so precomputed artifacts (teacher logits, attribution maps) stay aligned
across reloads.
"""

import hashlib
import os
from dataclasses import dataclass

import numpy as np

from .errors import DataError

CIFAR_RECORD_BYTES = 3073  # 1 label byte + 3 * 32 * 32 pixel bytes
CIFAR_TRAIN_FILES = tuple(f"data_batch_{i}.bin" for i in range(1, 6))
CIFAR_TEST_FILES = ("test_batch.bin",)


@dataclass
class Dataset:
    images: np.ndarray   # (N, C, H, W) float32 in [0,1]
    labels: np.ndarray   # (N,) int64
    ids: np.ndarray      # (N,) int64, stable across reloads
    split: str = "train"

    def __post_init__(self):
        if self.images.min() < 0 or self.images.max() > 1:
            raise DataError(f"pixel range [{self.images.min()}, "
                            f"{self.images.max()}] outside [0,1]")

    def __len__(self):
        return len(self.images)

    @property
    def num_classes(self):
        return int(self.labels.max()) + 1

    def checksum(self):
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.images, dtype="<f4").tobytes())
        h.update(np.ascontiguousarray(self.labels, dtype="<i8").tobytes())
        return h.hexdigest()

    def subset(self, indices):
        return Dataset(images=self.images[indices],
                       labels=self.labels[indices],
                       ids=self.ids[indices], split=self.split)


def _read_cifar_file(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) % CIFAR_RECORD_BYTES != 0:
        good = (len(raw) // CIFAR_RECORD_BYTES) * CIFAR_RECORD_BYTES
        raise DataError(
            f"{path}: truncated file, {len(raw)} bytes is not a multiple of "
            f"{CIFAR_RECORD_BYTES}; last whole record ends at byte offset "
            f"{good}")
    records = np.frombuffer(raw, dtype=np.uint8).reshape(-1,
                                                         CIFAR_RECORD_BYTES)
    labels = records[:, 0].astype(np.int64)
    pixels = records[:, 1:].reshape(-1, 3, 32, 32)  # channel-planar R,G,B
    images = pixels.astype(np.float32) / 255.0
    return images, labels


def load_cifar10_binary(directory):
    """Load the canonical binary batches; returns (train, test) Datasets."""
    def load_split(files, split):
        images, labels = [], []
        for name in files:
            path = os.path.join(directory, name)
            if not os.path.exists(path):
                raise DataError(f"missing CIFAR-10 batch file: {path}")
            imgs, labs = _read_cifar_file(path)
            images.append(imgs)
            labels.append(labs)
        images = np.concatenate(images)
        labels = np.concatenate(labels)
        ids = np.arange(len(images), dtype=np.int64)
        return Dataset(images=images, labels=labels, ids=ids, split=split)

    return (load_split(CIFAR_TRAIN_FILES, "train"),
            load_split(CIFAR_TEST_FILES, "test"))


def _pattern(kind, size, rng):
    """One [0,1] grayscale pattern with per-image jitter.

    Class parameters (orientation, frequency, cell size) are drawn from
    ranges that overlap between sibling classes (low vs high frequency bars,
    rings, checkers; the three ramp orientations), so a fraction of the
    images is genuinely ambiguous. That overlap sets a Bayes ceiling below
    100% and gives a converged teacher's soft outputs something to say that
    hard labels cannot.
    """
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    yy = yy / (size - 1) - 0.5
    xx = xx / (size - 1) - 0.5
    if kind.startswith("ramp"):
        center = {"ramp_x": 0.0, "ramp_diag": 45.0, "ramp_y": 90.0}[kind]
        theta = np.deg2rad(center + rng.uniform(-24.0, 24.0))
        u = np.cos(theta) * xx + np.sin(theta) * yy
        return (u - u.min()) / (u.max() - u.min())
    if kind.startswith("bars"):
        lo = kind.endswith("lo")
        freq = (2.0 + rng.uniform(-0.4, 0.7) if lo
                else 3.0 + rng.uniform(-0.7, 0.4))
        base = 0.0 if kind.startswith("bars_x") else 90.0
        theta = np.deg2rad(base + rng.uniform(-20.0, 20.0))
        u = np.cos(theta) * xx + np.sin(theta) * yy
        phase = rng.uniform(0, 2 * np.pi)
        return 0.5 + 0.5 * np.sin(2 * np.pi * freq * u + phase)
    if kind.startswith("rings"):
        lo = kind.endswith("lo")
        freq = (2.0 + rng.uniform(-0.4, 0.7) if lo
                else 3.0 + rng.uniform(-0.7, 0.4))
        cy = rng.uniform(-0.1, 0.1)
        cx = rng.uniform(-0.1, 0.1)
        r = np.sqrt((yy - cy) ** 2 + (xx - cx) ** 2)
        return 0.5 + 0.5 * np.cos(2 * np.pi * freq * r)
    if kind.startswith("checker"):
        lo = kind.endswith("lo")
        cell = (5.0 + rng.uniform(-0.9, 1.3) if lo
                else 7.0 + rng.uniform(-1.3, 0.9))
        f = size / (2.0 * cell)
        oy = rng.uniform(0, 2 * np.pi)
        ox = rng.uniform(0, 2 * np.pi)
        grid = (np.sin(2 * np.pi * f * xx + ox)
                * np.sin(2 * np.pi * f * yy + oy))
        return (grid > 0).astype(np.float64)
    raise ValueError(f"unknown pattern kind {kind!r}")


_PATTERN_KINDS = ("ramp_x", "ramp_y", "ramp_diag", "bars_x_lo", "bars_y_lo",
                  "bars_x_hi", "rings_lo", "rings_hi", "checker_lo",
                  "checker_hi")


def generate_synthetic(n_per_class, classes=10, size=32, seed=0,
                       split="train", noise=0.08):
    """Class-balanced parametric patterns (gradients, bars, rings, checkers)
    with seeded per-image jitter, channel tint and pixel noise. Identical
    seeds produce byte-identical datasets."""
    if n_per_class < 1:
        raise ValueError(f"n_per_class must be >= 1, got {n_per_class}")
    if classes > len(_PATTERN_KINDS):
        raise ValueError(f"at most {len(_PATTERN_KINDS)} classes supported, "
                         f"got {classes}")
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    n = n_per_class * classes
    images = np.empty((n, 3, size, size), dtype=np.float32)
    labels = np.empty(n, dtype=np.int64)
    i = 0
    for cls in range(classes):
        for _ in range(n_per_class):
            base = _pattern(_PATTERN_KINDS[cls], size, rng)
            tint = rng.uniform(0.6, 1.0, size=3)
            img = tint[:, None, None] * base[None, :, :]
            img = img + rng.normal(0.0, noise, size=img.shape)
            images[i] = np.clip(img, 0.0, 1.0).astype(np.float32)
            labels[i] = cls
            i += 1
    ids = np.arange(n, dtype=np.int64)
    return Dataset(images=images, labels=labels, ids=ids, split=split)
