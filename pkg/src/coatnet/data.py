"""Dataset ingestion: CIFAR-10 binary batches and a seeded synthetic set.

CIFAR-10 batch format: consecutive 3073-byte records, one label byte then
3072 pixel bytes (1024 red, 1024 green, 1024 blue, row-major 32x32).
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError

_RECORD = 3073
_PIXELS = 3072


@dataclass
class Dataset:
    images: np.ndarray          # [n, r, r, 3] float32 in [0, 1]
    labels: np.ndarray          # [n] int64
    num_classes: int
    split: str = "train"

    def __post_init__(self):
        if self.images.ndim != 4 or self.images.shape[3] != 3:
            raise ConfigError(f"images must be [n, r, r, 3], got {self.images.shape}")
        if len(self.labels) != len(self.images):
            raise ConfigError("images/labels length mismatch")
        if self.labels.min(initial=0) < 0 or self.labels.max(initial=0) >= self.num_classes:
            raise ConfigError("labels out of range")

    def __len__(self) -> int:
        return len(self.images)

    @property
    def resolution(self) -> int:
        return self.images.shape[1]

    def channel_stats(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-channel mean/std of this split (used to normalize batches)."""
        mean = self.images.mean(axis=(0, 1, 2), dtype=np.float64)
        std = self.images.std(axis=(0, 1, 2), dtype=np.float64)
        return mean.astype(np.float32), np.maximum(std, 1e-6).astype(np.float32)

    def subset(self, start: int, stop: int, split: str | None = None) -> "Dataset":
        return Dataset(self.images[start:stop], self.labels[start:stop],
                       self.num_classes, split or self.split)


def load_cifar10(path: str, limit: int | None = None, split: str = "train") -> Dataset:
    """Read one ``*.bin`` batch file or every ``*.bin`` under a directory."""
    if os.path.isdir(path):
        files = sorted(f for f in os.listdir(path) if f.endswith(".bin"))
        if not files:
            raise ConfigError(f"no .bin batch files under {path}")
        raw = b"".join(open(os.path.join(path, f), "rb").read() for f in files)
    else:
        try:
            raw = open(path, "rb").read()
        except OSError as e:
            raise ConfigError(f"cannot read dataset: {e}") from None
    if not raw or len(raw) % _RECORD:
        raise ConfigError(
            f"{path}: size {len(raw)} is not a whole number of 3073-byte records")
    rec = np.frombuffer(raw, dtype=np.uint8).reshape(-1, _RECORD)
    if limit is not None:
        rec = rec[:limit]
    labels = rec[:, 0].astype(np.int64)
    images = rec[:, 1:].reshape(-1, 3, 32, 32).transpose(0, 2, 3, 1)
    images = (images.astype(np.float32) / 255.0)
    return Dataset(images, labels, num_classes=10, split=split)


def write_cifar10(path: str, ds: Dataset) -> None:
    """Inverse of load_cifar10; quantizes to bytes."""
    if ds.resolution != 32 or ds.num_classes > 256:
        raise ConfigError("CIFAR-10 format holds 32x32 images with byte labels")
    px = np.clip(np.round(ds.images * 255.0), 0, 255).astype(np.uint8)
    rec = np.empty((len(ds), _RECORD), dtype=np.uint8)
    rec[:, 0] = ds.labels.astype(np.uint8)
    rec[:, 1:] = px.transpose(0, 3, 1, 2).reshape(len(ds), _PIXELS)
    with open(path, "wb") as f:
        f.write(rec.tobytes())


def synthetic_dataset(n: int, num_classes: int = 10, resolution: int = 32,
                      seed: int = 0, noise: float = 0.3, split: str = "train") -> Dataset:
    """Seeded learnable set: per-class template blended with uniform noise."""
    rng = np.random.default_rng(seed)
    templates = rng.random((num_classes, resolution, resolution, 3), dtype=np.float32)
    labels = rng.integers(0, num_classes, size=n)
    imgs = templates[labels] * (1.0 - noise) + noise * rng.random(
        (n, resolution, resolution, 3), dtype=np.float32)
    return Dataset(imgs.astype(np.float32), labels.astype(np.int64), num_classes, split)
