"""Desk-scale datasets.

The synthetic texture task labels an image by stripe orientation: class 0 is
vertical stripes, class 1 horizontal. Frequency and phase are random, so a
transposed class-0 image is a class-1 image with identical pixel statistics.
Any model that only sees per-pixel values (or transposition-symmetric
neighbourhoods) is stuck at chance; an oriented spatial filter is required.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Iterator, Tuple

import numpy as np

from .io import read_ht1, write_ht1


@dataclass
class Dataset:
    images: np.ndarray  # [N, C, H, W] float32
    labels: np.ndarray  # [N] int64
    split: str = "train"
    n_classes: int = 2

    def __post_init__(self):
        self.images = np.ascontiguousarray(self.images, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 4:
            raise ValueError(f"images must be [N,C,H,W], got shape {self.images.shape}")
        if len(self.images) != len(self.labels):
            raise ValueError(f"{len(self.images)} images but {len(self.labels)} labels")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise ValueError(f"labels must lie in [0, {self.n_classes})")

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, idx) -> "Dataset":
        return Dataset(self.images[idx], self.labels[idx], self.split, self.n_classes)


def synth_texture(
    n: int,
    hw: int = 16,
    noise: float = 0.1,
    seed=0,
    split: str = "train",
    channels: int = 3,
    cue: float = 0.0,
    cue_reliability: float = 1.0,
) -> Dataset:
    """Oriented-stripe classification images.

    Each image is ``sin(2*pi*f*t/hw + phase)`` along x (class 0) or y (class 1)
    with ``f ~ U[2, 4]`` cycles, the same pattern in every channel, plus
    Gaussian noise of std ``noise``. Classes are exactly balanced for even n.

    ``cue`` optionally adds a brightness offset of ``+cue`` (class 0) or
    ``-cue`` (class 1) whose sign agrees with the label with probability
    ``cue_reliability``; it gives per-pixel models a capped, known accuracy.
    """
    if hw < 8:
        raise ValueError(f"hw must be >= 8, got {hw}")
    rng = np.random.default_rng(seed)
    labels = rng.permutation(np.arange(n) % 2)
    freq = rng.uniform(2.0, 4.0, size=n)
    phase = rng.uniform(0.0, 2 * np.pi, size=n)
    t = np.arange(hw, dtype=np.float64)
    waves = np.sin(2 * np.pi * freq[:, None] * t[None, :] / hw + phase[:, None])  # [n, hw]
    img = np.where(
        (labels == 0)[:, None, None],
        np.broadcast_to(waves[:, None, :], (n, hw, hw)),  # varies along x: vertical stripes
        np.broadcast_to(waves[:, :, None], (n, hw, hw)),  # varies along y: horizontal stripes
    )
    images = np.repeat(img[:, None], channels, axis=1)
    images = images + noise * rng.standard_normal(images.shape)
    if cue:
        agree = rng.random(n) < cue_reliability
        sign = np.where(labels == 0, 1.0, -1.0) * np.where(agree, 1.0, -1.0)
        images = images + (cue * sign)[:, None, None, None]
    return Dataset(images.astype(np.float32), labels, split)


def texture_splits(n_train: int, n_test: int, hw: int = 16, noise: float = 0.1, seed=0, **kw) -> Tuple[Dataset, Dataset]:
    """Independent train/test draws from child seeds of ``seed``."""
    s_train, s_test = np.random.SeedSequence(seed).spawn(2)
    return (
        synth_texture(n_train, hw, noise, s_train, "train", **kw),
        synth_texture(n_test, hw, noise, s_test, "test", **kw),
    )


def minibatches(ds: Dataset, batch: int, seed) -> Iterator[Tuple[np.ndarray, np.ndarray]]:
    """One epoch of shuffled minibatches; the short final batch is dropped.

    ``seed`` may be an int or a ``np.random.Generator`` (which is advanced, so
    successive epochs drawn from one generator get fresh shuffles).
    """
    if batch < 1 or batch > len(ds):
        raise ValueError(f"batch size {batch} must be in [1, {len(ds)}]")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    order = rng.permutation(len(ds))
    for start in range(0, len(ds) - batch + 1, batch):
        idx = order[start:start + batch]
        yield ds.images[idx], ds.labels[idx]


def save_dataset(ds: Dataset, prefix: str) -> Tuple[str, str]:
    """Write ``<prefix>images.ht1`` and ``<prefix>labels.ht1``."""
    paths = (f"{prefix}images.ht1", f"{prefix}labels.ht1")
    write_ht1(paths[0], ds.images)
    write_ht1(paths[1], ds.labels.astype(np.float32))
    return paths


def load_dataset(prefix: str, split: str = "train", n_classes=None) -> Dataset:
    img_path, lab_path = f"{prefix}images.ht1", f"{prefix}labels.ht1"
    for p in (img_path, lab_path):
        if not os.path.exists(p):
            raise FileNotFoundError(f"dataset file not found: {p}")
    images = read_ht1(img_path)
    raw = read_ht1(lab_path).reshape(-1)
    labels = raw.astype(np.int64)
    if not np.array_equal(labels, raw):
        raise ValueError(f"{lab_path}: labels must be integral")
    k = int(n_classes) if n_classes else int(labels.max()) + 1
    return Dataset(images, labels, split, k)
