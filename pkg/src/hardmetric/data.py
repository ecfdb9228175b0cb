"""Synthetic benchmark data, class-disjoint splitting, and CSV persistence.

The on-disk dataset contract is a UTF-8 CSV with header
`label,f_0,...,f_{d-1}` and one sample per row. Values are written as
shortest round-trip decimals, so save/load is lossless for 64-bit floats.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DatasetParseError, InputError
from .nn import as_matrix


@dataclass
class Dataset:
    """Sample matrix plus dense integer class labels in [0, num_classes)."""

    samples: np.ndarray
    labels: np.ndarray
    class_names: list[str] | None = None

    def __post_init__(self):
        self.samples = as_matrix(self.samples, "samples")
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.labels.shape != (self.samples.shape[0],):
            raise InputError(
                f"labels shape {self.labels.shape} does not match {self.samples.shape[0]} samples"
            )
        if self.labels.size == 0:
            raise InputError("dataset must contain at least one sample")
        present = np.unique(self.labels)
        if present[0] != 0 or present[-1] != len(present) - 1:
            raise InputError("labels must be dense integers starting at 0")

    @property
    def num_samples(self) -> int:
        return self.samples.shape[0]

    @property
    def num_classes(self) -> int:
        return int(self.labels.max()) + 1

    @property
    def input_dim(self) -> int:
        return self.samples.shape[1]


def synth_gaussian_dataset(
    num_classes: int,
    per_class: int,
    input_dim: int,
    center_scale: float = 10.0,
    noise_sigma: float = 1.0,
    seed: int = 0,
) -> Dataset:
    """Isotropic Gaussian blobs around class centers drawn in a hypercube.

    Centers are uniform in [0, center_scale] per coordinate; each sample is
    its class center plus N(0, noise_sigma^2) noise. Fully determined by the
    seed.
    """
    if num_classes <= 0 or per_class <= 0 or input_dim <= 0:
        raise InputError("num_classes, per_class, and input_dim must be positive")
    if noise_sigma < 0:
        raise InputError(f"noise_sigma must be nonnegative, got {noise_sigma}")
    rng = np.random.default_rng(seed)
    centers = rng.uniform(0.0, center_scale, size=(num_classes, input_dim))
    samples = np.empty((num_classes * per_class, input_dim))
    labels = np.repeat(np.arange(num_classes), per_class)
    for c in range(num_classes):
        block = slice(c * per_class, (c + 1) * per_class)
        samples[block] = centers[c] + rng.normal(0.0, noise_sigma, size=(per_class, input_dim))
    return Dataset(samples, labels)


@dataclass
class ZeroShotSplit:
    """Class-disjoint partition: test classes are never seen in training."""

    train_classes: np.ndarray
    test_classes: np.ndarray

    def __post_init__(self):
        self.train_classes = np.asarray(self.train_classes, dtype=np.int64)
        self.test_classes = np.asarray(self.test_classes, dtype=np.int64)
        overlap = np.intersect1d(self.train_classes, self.test_classes)
        if overlap.size:
            raise InputError(f"split is not class-disjoint; shared classes {overlap.tolist()}")


def split_zero_shot(dataset: Dataset, train_fraction: float, seed: int) -> ZeroShotSplit:
    """Shuffle classes with the seed, then cut: ceil(C * fraction) go to train.

    The fraction must leave at least one class on each side.
    """
    if not (0.0 < train_fraction < 1.0):
        raise InputError(f"train_fraction must lie strictly in (0, 1), got {train_fraction}")
    c = dataset.num_classes
    if c < 2:
        raise InputError("zero-shot split needs at least two classes")
    n_train = math.ceil(c * train_fraction)
    if n_train >= c:
        raise InputError(f"train_fraction {train_fraction} leaves no test classes for {c} classes")
    order = np.random.default_rng(seed).permutation(c)
    return ZeroShotSplit(np.sort(order[:n_train]), np.sort(order[n_train:]))


def take_classes(dataset: Dataset, class_ids) -> tuple[np.ndarray, np.ndarray]:
    """Rows of the dataset belonging to the given classes, original labels kept."""
    class_ids = np.asarray(class_ids, dtype=np.int64)
    mask = np.isin(dataset.labels, class_ids)
    return dataset.samples[mask], dataset.labels[mask]


def save_dataset(dataset: Dataset, path) -> None:
    header = "label," + ",".join(f"f_{i}" for i in range(dataset.input_dim))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(header + "\n")
        for label, row in zip(dataset.labels, dataset.samples):
            fh.write(f"{label}," + ",".join(repr(float(v)) for v in row) + "\n")


def load_dataset(path) -> Dataset:
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or not lines[0].strip():
        raise DatasetParseError("no header")
    header = lines[0].split(",")
    dim = len(header) - 1
    expected = ["label"] + [f"f_{i}" for i in range(dim)]
    if header != expected or dim < 1:
        raise DatasetParseError(f"unknown header {lines[0]!r}", line=1)
    samples = []
    labels = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != dim + 1:
            raise DatasetParseError(f"expected {dim + 1} columns, found {len(parts)}", line=lineno)
        try:
            label = int(parts[0])
            row = [float(v) for v in parts[1:]]
        except ValueError as exc:
            raise DatasetParseError(str(exc), line=lineno) from None
        if label < 0:
            raise DatasetParseError(f"negative label {label}", line=lineno)
        labels.append(label)
        samples.append(row)
    if not samples:
        raise DatasetParseError("file contains a header but no samples")
    try:
        return Dataset(np.asarray(samples), np.asarray(labels))
    except InputError as exc:
        raise DatasetParseError(str(exc)) from None
