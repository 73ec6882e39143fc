"""Synthetic balanced classification data (Gaussian blobs)."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Dataset:
    X: np.ndarray
    y: np.ndarray

    def __len__(self):
        return len(self.y)


@dataclass(frozen=True)
class DataSplit:
    train: Dataset
    validation: Dataset
    test: Dataset


@dataclass
class SyntheticSpec:
    n_classes: int = 4
    n_features: int = 2
    train_per_class: int = 600
    val_per_class: int = 150
    test_per_class: int = 150
    noise: float = 1.5
    radius: float = 3.0

    def __post_init__(self):
        if self.n_classes < 2:
            raise ValueError("n_classes must be >= 2")
        if self.n_features < 2:
            raise ValueError("n_features must be >= 2")
        if min(self.train_per_class, self.val_per_class, self.test_per_class) < 1:
            raise ValueError("every split needs at least one point per class")
        if self.noise < 0:
            raise ValueError("noise must be >= 0")


def class_centers(spec: SyntheticSpec) -> np.ndarray:
    """Centers evenly spaced on a circle in the first two features."""
    c = np.zeros((spec.n_classes, spec.n_features))
    for k in range(spec.n_classes):
        angle = 2 * math.pi * k / spec.n_classes
        c[k, 0] = spec.radius * math.cos(angle)
        c[k, 1] = spec.radius * math.sin(angle)
    return c


def make_synthetic_dataset(spec: SyntheticSpec, seed: int) -> DataSplit:
    rng = np.random.default_rng(seed)
    centers = class_centers(spec)
    per_class = (spec.train_per_class, spec.val_per_class, spec.test_per_class)
    parts = []
    for count in per_class:
        X = np.concatenate([
            centers[k] + spec.noise * rng.standard_normal((count, spec.n_features))
            for k in range(spec.n_classes)
        ])
        y = np.repeat(np.arange(spec.n_classes), count)
        order = rng.permutation(len(y))
        parts.append(Dataset(X[order], y[order]))
    return DataSplit(*parts)
