"""Datasets: CIFAR-10 binary batches, a synthetic image generator, normalization."""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataFormatError

CIFAR_RECORD = 3073
CIFAR_SHAPE = (3, 32, 32)


@dataclass
class LabeledImageSet:
    images: np.ndarray  # N x C x H x W, float64
    labels: np.ndarray  # N, int64
    n_classes: int
    mean: np.ndarray | None = None  # per-channel statistics used to normalize
    std: np.ndarray | None = None

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise DataFormatError(f"{len(self.images)} images but {len(self.labels)} labels")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise DataFormatError(f"label outside [0, {self.n_classes})")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def image_shape(self) -> tuple:
        return tuple(self.images.shape[1:])

    def subset(self, idx) -> "LabeledImageSet":
        return LabeledImageSet(self.images[idx], self.labels[idx], self.n_classes, self.mean, self.std)


def channel_stats(images: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    return images.mean(axis=(0, 2, 3)), images.std(axis=(0, 2, 3))


def standardize(images: np.ndarray, mean: np.ndarray, std: np.ndarray) -> np.ndarray:
    std = np.where(std > 0, std, 1.0)
    return (images - mean[None, :, None, None]) / std[None, :, None, None]


def normalized(ds: LabeledImageSet, mean=None, std=None) -> LabeledImageSet:
    """Standardize per channel; statistics default to the set's own."""
    if mean is None:
        mean, std = channel_stats(ds.images)
    return LabeledImageSet(standardize(ds.images, mean, std), ds.labels, ds.n_classes, mean, std)


def holdout_split(raw: LabeledImageSet, fraction: float = 0.1) -> tuple[LabeledImageSet, LabeledImageSet]:
    """Last ``fraction`` of the records is held out; both parts are
    standardized with the training part's statistics."""
    if not 0 < fraction < 1:
        raise ConfigError("held-out fraction must lie in (0, 1)")
    n_test = int(round(len(raw) * fraction))
    n_train = len(raw) - n_test
    if n_train < 1 or n_test < 1:
        raise ConfigError(f"cannot split {len(raw)} records with fraction {fraction}")
    train = normalized(raw.subset(slice(0, n_train)))
    test = normalized(raw.subset(slice(n_train, None)), train.mean, train.std)
    return train, test


# --------------------------------------------------------------------------
# CIFAR-10 binary format
# --------------------------------------------------------------------------


def read_cifar10_records(path) -> tuple[np.ndarray, np.ndarray]:
    """Raw ``uint8`` images (N x 3 x 32 x 32) and labels from one batch file."""
    blob = np.fromfile(path, dtype=np.uint8)
    if blob.size % CIFAR_RECORD:
        offset = blob.size - blob.size % CIFAR_RECORD
        raise DataFormatError(
            f"{path}: truncated record at byte offset {offset} "
            f"(file size {blob.size} is not a multiple of {CIFAR_RECORD})"
        )
    rec = blob.reshape(-1, CIFAR_RECORD)
    labels = rec[:, 0].astype(np.int64)
    bad = np.flatnonzero(labels > 9)
    if bad.size:
        raise DataFormatError(
            f"{path}: label byte {labels[bad[0]]} > 9 at byte offset {bad[0] * CIFAR_RECORD}"
        )
    return rec[:, 1:].reshape(-1, *CIFAR_SHAPE), labels


def write_cifar10(path, images: np.ndarray, labels) -> None:
    """Write ``uint8`` images (N x 3 x 32 x 32) in the CIFAR-10 binary layout."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    if images.shape[1:] != CIFAR_SHAPE or len(images) != len(labels):
        raise DataFormatError(f"expected N x 3 x 32 x 32 images, got {images.shape}")
    rec = np.concatenate([labels[:, None], images.reshape(len(images), -1)], axis=1)
    rec.tofile(path)


def load_cifar10_raw(paths, limit_per_class: int | None = None) -> LabeledImageSet:
    """Decode and scale to [0, 1] without standardizing."""
    paths = list(paths or [])
    if not paths:
        raise ConfigError("no CIFAR-10 batch files given")
    imgs, labs = [], []
    for p in paths:
        if not os.path.exists(p):
            raise ConfigError(f"CIFAR-10 file not found: {p}")
        x, y = read_cifar10_records(p)
        imgs.append(x)
        labs.append(y)
    images, labels = np.concatenate(imgs), np.concatenate(labs)
    if limit_per_class is not None:
        keep = np.zeros(len(labels), dtype=bool)
        for k in range(10):
            keep[np.flatnonzero(labels == k)[:limit_per_class]] = True
        images, labels = images[keep], labels[keep]
    return LabeledImageSet(images.astype(np.float64) / 255.0, labels, 10)


def load_cifar10(paths, limit_per_class: int | None = None) -> LabeledImageSet:
    return normalized(load_cifar10_raw(paths, limit_per_class))


# --------------------------------------------------------------------------
# Synthetic data
# --------------------------------------------------------------------------


def _templates(n_classes, channels, size, rng, n_freq=3):
    """Smooth per-class patterns: random mixtures of low-order cosines, unit std."""
    grid = (np.arange(size) + 0.5) / size
    basis = np.cos(np.pi * np.arange(n_freq)[:, None] * grid[None, :])  # n_freq x size
    coef = rng.standard_normal((n_classes, channels, n_freq, n_freq))
    t = np.einsum("kcuv,uy,vx->kcyx", coef, basis, basis)
    t -= t.mean(axis=(1, 2, 3), keepdims=True)
    return t / t.std(axis=(1, 2, 3), keepdims=True)


def gen_synthetic_raw(
    n_classes: int, per_class: int, size: int = 16, seed: int = 0, channels: int = 3, noise: float = 1 / 3
) -> LabeledImageSet:
    """Class template plus white noise (template/noise std ratio 3:1 by default),
    records shuffled with the seed."""
    if n_classes < 2:
        raise ConfigError("synthetic data needs at least 2 classes")
    if per_class < 1 or size < 1:
        raise ConfigError("per_class and size must be positive")
    rng = np.random.default_rng(seed)
    templates = _templates(n_classes, channels, size, rng)
    labels = np.repeat(np.arange(n_classes), per_class)
    images = templates[labels] + noise * rng.standard_normal((len(labels), channels, size, size))
    order = rng.permutation(len(labels))
    return LabeledImageSet(images[order], labels[order].astype(np.int64), n_classes)


def gen_synthetic(n_classes: int, per_class: int, size: int = 16, seed: int = 0, channels: int = 3) -> LabeledImageSet:
    return normalized(gen_synthetic_raw(n_classes, per_class, size, seed, channels))


# --------------------------------------------------------------------------
# Augmentation
# --------------------------------------------------------------------------


def augment(batch: np.ndarray, rng: np.random.Generator, pad: int = 4) -> np.ndarray:
    """Random horizontal flip and random crop from a zero-padded copy."""
    n, _, h, w = batch.shape
    flip = rng.random(n) < 0.5
    shifts = rng.integers(0, 2 * pad + 1, size=(n, 2))
    padded = np.pad(batch, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    out = np.empty_like(batch)
    for i in range(n):
        dy, dx = shifts[i]
        img = padded[i, :, dy : dy + h, dx : dx + w]
        out[i] = img[:, :, ::-1] if flip[i] else img
    return out
