"""Desk-scale synthetic datasets.

All generators draw from ``numpy.random.default_rng(seed)`` (PCG64, 64-bit
seed), so a seed fixes the output bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError

KINDS = ("blobs", "spirals", "conv8x8")


@dataclass(frozen=True)
class Dataset:
    name: str
    x: np.ndarray  # float32 [n, *sample_shape]
    y: np.ndarray  # int64 [n]
    classes: int

    def __post_init__(self):
        if len(self.x) == 0 or len(self.x) != len(self.y):
            raise DomainError(f"dataset needs matching non-empty x/y, got {len(self.x)}/{len(self.y)}")

    def __len__(self):
        return len(self.y)

    @property
    def sample_shape(self) -> tuple:
        return tuple(self.x.shape[1:])


def _class_labels(n: int, classes: int) -> np.ndarray:
    # exact per-class counts; the first n % classes classes get one extra
    return np.repeat(np.arange(classes), [n // classes + (c < n % classes) for c in range(classes)])


def blobs(n: int = 200, classes: int = 2, seed: int = 0, spread: float = 1.0,
          radius: float = 2.0) -> Dataset:
    """Isotropic 2-D Gaussian blobs with centres evenly spaced on a circle."""
    if n < classes or classes < 2:
        raise DomainError(f"need n >= classes >= 2, got n={n}, classes={classes}")
    rng = np.random.default_rng(seed)
    y = _class_labels(n, classes)
    ang = 2 * math.pi * np.arange(classes) / classes
    centres = radius * np.stack([np.cos(ang), np.sin(ang)], axis=1)
    x = centres[y] + spread * rng.standard_normal((n, 2))
    perm = rng.permutation(n)
    return Dataset("blobs", x[perm].astype(np.float32), y[perm].astype(np.int64), classes)


def spirals(n: int = 200, classes: int = 2, seed: int = 0, noise: float = 0.1,
            turns: float = 1.5) -> Dataset:
    """Interleaved Archimedean spirals, one arm per class."""
    if n < classes or classes < 2:
        raise DomainError(f"need n >= classes >= 2, got n={n}, classes={classes}")
    rng = np.random.default_rng(seed)
    y = _class_labels(n, classes)
    t = rng.uniform(0.1, 1.0, n)
    ang = 2 * math.pi * turns * t + 2 * math.pi * y / classes
    x = np.stack([t * np.cos(ang), t * np.sin(ang)], axis=1) * 2.0
    x += noise * rng.standard_normal((n, 2))
    perm = rng.permutation(n)
    return Dataset("spirals", x[perm].astype(np.float32), y[perm].astype(np.int64), classes)


def conv8x8(n: int = 400, classes: int = 4, seed: int = 0, noise: float = 0.2) -> Dataset:
    """8x8 single-channel images holding one Gaussian bump.

    Each class places its bump near its own anchor on a ring; position
    jitter and pixel noise make the classes overlap slightly.
    """
    if n < classes or classes < 2:
        raise DomainError(f"need n >= classes >= 2, got n={n}, classes={classes}")
    rng = np.random.default_rng(seed)
    y = _class_labels(n, classes)
    ang = 2 * math.pi * np.arange(classes) / classes
    anchors = 3.5 + 2.2 * np.stack([np.sin(ang), np.cos(ang)], axis=1)
    centres = anchors[y] + 0.7 * rng.standard_normal((n, 2))
    rr, cc = np.mgrid[0:8, 0:8]
    d2 = (rr[None] - centres[:, 0, None, None]) ** 2 + (cc[None] - centres[:, 1, None, None]) ** 2
    img = np.exp(-d2 / (2 * 1.2**2)) + noise * rng.standard_normal((n, 8, 8))
    perm = rng.permutation(n)
    return Dataset("conv8x8", img[perm, None].astype(np.float32), y[perm].astype(np.int64), classes)


def random_tensor(shape, density: float = 1.0, seed: int = 0, scale: float = 1.0) -> np.ndarray:
    """iid N(0, scale^2) values, each kept with probability ``density``."""
    if not 0.0 <= density <= 1.0:
        raise DomainError(f"density must lie in [0, 1], got {density}")
    rng = np.random.default_rng(seed)
    values = scale * rng.standard_normal(shape)
    keep = rng.random(shape) < density
    return np.where(keep, values, 0.0).astype(np.float32)


def make(kind: str, n: int | None = None, classes: int | None = None, seed: int = 0) -> Dataset:
    gens = {"blobs": blobs, "spirals": spirals, "conv8x8": conv8x8}
    if kind not in gens:
        raise DomainError(f"unknown dataset kind {kind!r}; expected one of {KINDS}")
    kwargs = {"seed": seed}
    if n is not None:
        kwargs["n"] = n
    if classes is not None:
        kwargs["classes"] = classes
    return gens[kind](**kwargs)
