"""Deterministic synthetic image classes for desk-scale experiments.

Ten classes drawn from three pattern families (oriented stripes, checkers,
linear ramps), each with a class-specific frequency or direction plus a
class-specific brightness offset, so class statistics are separable by
construction. Per-image variation comes from a small set of discrete phases
and a continuous contrast jitter, giving the tokenizer enough patch variety
without making token sequences hard to predict.

Every pixel is a pure function of (seed, image index), so datasets never need
to be stored to be reproduced.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .rng import CounterRng, mix64

_PHASES = (0.0, 0.5 * np.pi, np.pi, 1.5 * np.pi)


@dataclass
class SyntheticDataset:
    n_images: int = 500
    image_size: int = 32
    n_classes: int = 10
    channels: int = 1
    seed: int = 0
    noise: float = 0.02

    def __post_init__(self):
        if self.n_images < 1:
            raise ConfigError(f"n_images must be positive, got {self.n_images}")
        if self.n_classes < 2 or self.n_classes > 10:
            raise ConfigError(f"n_classes must be in [2, 10], got {self.n_classes}")
        if self.channels not in (1, 3):
            raise ConfigError(f"channels must be 1 or 3, got {self.channels}")
        if self.image_size < 8:
            raise ConfigError(f"image_size must be >= 8, got {self.image_size}")
        self._cache: dict[int, np.ndarray] = {}

    def label(self, idx: int) -> int:
        return idx % self.n_classes

    def labels(self) -> np.ndarray:
        return np.arange(self.n_images, dtype=np.int64) % self.n_classes

    def image(self, idx: int) -> np.ndarray:
        """One [c,h,w] image in [-1, 1]."""
        return self._cached(int(idx)).copy()

    def _cached(self, idx: int) -> np.ndarray:
        # every pixel is pure in (seed, idx), so memoizing is invisible
        got = self._cache.get(idx)
        if got is None:
            got = self._cache[idx] = self._generate(idx)
        return got

    def _generate(self, idx: int) -> np.ndarray:
        if not 0 <= idx < self.n_images:
            raise IndexError(f"image index {idx} outside [0, {self.n_images})")
        label = self.label(idx)
        rng = CounterRng(mix64(self.seed ^ (idx * 0x0FF51AFD7ED558CD + 0x2545F4914F6CDD1D)))
        s = self.image_size
        yy, xx = np.meshgrid(np.arange(s) + 0.5, np.arange(s) + 0.5, indexing="ij")
        xx = xx / s
        yy = yy / s

        family = label % 3
        variant = label // 3
        if family == 0:
            # oriented stripes: class fixes frequency and angle, image picks a phase
            freq = 2 + variant
            theta = variant * np.pi / 4
            phase = _PHASES[rng.randint(4)]
            pattern = np.sin(2 * np.pi * freq * (xx * np.cos(theta) + yy * np.sin(theta)) + phase)
        elif family == 1:
            freq = 2 + variant
            p1 = _PHASES[rng.randint(4)]
            p2 = _PHASES[rng.randint(4)]
            pattern = np.sin(2 * np.pi * freq * xx + p1) * np.sin(2 * np.pi * freq * yy + p2)
        else:
            theta = variant * np.pi / 3
            proj = xx * np.cos(theta) + yy * np.sin(theta)
            lo, hi = proj.min(), proj.max()
            ramp = 2.0 * (proj - lo) / max(hi - lo, 1e-9) - 1.0
            pattern = ramp if rng.randint(2) == 0 else -ramp

        contrast = 0.45 + 0.2 * rng.uniform()
        bias = -0.3 + 0.6 * label / max(self.n_classes - 1, 1)
        plane = contrast * pattern + bias
        if self.noise > 0:
            plane = plane + self.noise * rng.normals(s * s).reshape(s, s)
        plane = np.clip(plane, -1.0, 1.0)
        return np.broadcast_to(plane, (self.channels, s, s)).copy()

    def batch(self, idxs) -> tuple[np.ndarray, np.ndarray]:
        idxs = np.asarray(idxs, dtype=np.int64)
        imgs = np.stack([self._cached(int(i)) for i in idxs])
        return imgs, idxs % self.n_classes

    def all_images(self) -> tuple[np.ndarray, np.ndarray]:
        return self.batch(np.arange(self.n_images))


def make_synthetic(n_images: int = 500, image_size: int = 32, n_classes: int = 10,
                   channels: int = 1, seed: int = 0) -> SyntheticDataset:
    return SyntheticDataset(n_images=n_images, image_size=image_size, n_classes=n_classes,
                            channels=channels, seed=seed)


class ArrayDataset:
    """In-memory [n,c,h,w] images with labels, presented like the synthetic set.

    Lets the training loops consume arbitrary user arrays through the same
    index/batch surface the generated datasets expose.
    """

    def __init__(self, images: np.ndarray, labels: np.ndarray | None = None,
                 n_classes: int | None = None):
        images = np.asarray(images, dtype=np.float64)
        if images.ndim != 4 or images.shape[1] not in (1, 3):
            raise ConfigError(f"images must be [n, 1|3, h, w], got shape {images.shape}")
        if labels is None:
            labels = np.zeros(images.shape[0], dtype=np.int64)
        labels = np.asarray(labels, dtype=np.int64)
        if labels.shape != (images.shape[0],):
            raise ConfigError(f"labels must be [{images.shape[0]}], got shape {labels.shape}")
        if labels.size and labels.min() < 0:
            raise ConfigError("labels must be non-negative")
        self.images = images
        self._labels = labels
        self.n_images = images.shape[0]
        self.image_size = images.shape[2]
        self.channels = images.shape[1]
        self.n_classes = int(n_classes if n_classes is not None else labels.max() + 1 if labels.size else 1)
        if labels.size and labels.max() >= self.n_classes:
            raise ConfigError(f"label {labels.max()} outside {self.n_classes} classes")

    def label(self, idx: int) -> int:
        return int(self._labels[idx])

    def labels(self) -> np.ndarray:
        return self._labels.copy()

    def image(self, idx: int) -> np.ndarray:
        if not 0 <= idx < self.n_images:
            raise IndexError(f"image index {idx} outside [0, {self.n_images})")
        return self.images[idx]

    def batch(self, idxs) -> tuple[np.ndarray, np.ndarray]:
        idxs = np.asarray(idxs, dtype=np.int64)
        return self.images[idxs], self._labels[idxs]

    def all_images(self) -> tuple[np.ndarray, np.ndarray]:
        return self.images, self._labels
