"""Synthetic cluster datasets, stratified splitting and the text dataset format.

Labels are 0-based in memory. The text format stores them 1-based::

    K dim N
    label f_1 ... f_dim        (N lines, label in 1..K)
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InputError, ParseError, ValidationError
from .rng import Xoshiro256, derive_seed


@dataclass(eq=False)
class Dataset:
    X: np.ndarray
    y: np.ndarray
    num_classes: int

    def __post_init__(self):
        self.X = np.ascontiguousarray(self.X, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        if self.X.ndim != 2 or self.y.shape != (len(self.X),):
            raise ValidationError("X must be (N, dim) and y must be (N,)")
        if len(self.y) and (self.y.min() < 0 or self.y.max() >= self.num_classes):
            raise ValidationError(f"label outside 1..{self.num_classes}")
        if not np.all(np.isfinite(self.X)):
            raise ValidationError("non-finite feature value")

    def __len__(self):
        return len(self.y)

    @property
    def feature_dim(self) -> int:
        return self.X.shape[1]

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.y, minlength=self.num_classes)

    def subset(self, idx) -> "Dataset":
        return Dataset(self.X[idx], self.y[idx], self.num_classes)


def cluster_centers(num_classes: int, dim: int, separation: float) -> np.ndarray:
    """Center k sits at ``separation * (1 + k // dim)`` on axis ``k % dim``."""
    centers = np.zeros((num_classes, dim))
    for k in range(num_classes):
        centers[k, k % dim] = separation * (1 + k // dim)
    return centers


def generate_clusters(num_classes: int, dim: int, per_class: int, separation: float,
                      noise_sigma: float, seed: int) -> Dataset:
    """Isotropic Gaussian blobs around :func:`cluster_centers`, class-major order."""
    if min(num_classes, dim, per_class) < 1:
        raise InputError("num_classes, dim and per_class must be positive")
    if separation <= 0 or noise_sigma <= 0:
        raise InputError("separation and noise_sigma must be positive")
    centers = cluster_centers(num_classes, dim, separation)
    rng = Xoshiro256(derive_seed(seed, "clusters"))
    noise = rng.normal(num_classes * per_class * dim).reshape(num_classes * per_class, dim)
    y = np.repeat(np.arange(num_classes), per_class)
    X = centers[y] + noise_sigma * noise
    return Dataset(X, y, num_classes)


def split(dataset: Dataset, test_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Stratified train/test split.

    The total test size is ``round(N * test_fraction)``, shared out per class by
    largest remainder so every class gets the floor or ceil of its exact share.
    Both parts keep the input order.
    """
    if not 0.0 < test_fraction < 1.0:
        raise InputError(f"test_fraction must lie in (0, 1), got {test_fraction}")
    counts = dataset.class_counts()
    exact = counts * test_fraction
    take = np.floor(exact).astype(np.int64)
    remaining = int(round(len(dataset) * test_fraction)) - int(take.sum())
    # largest remainder first, ties to the lower class index
    order = sorted(range(dataset.num_classes), key=lambda k: (-(exact[k] - take[k]), k))
    for k in order[:max(remaining, 0)]:
        if take[k] < counts[k]:
            take[k] += 1

    rng = Xoshiro256(derive_seed(seed, "split"))
    is_test = np.zeros(len(dataset), dtype=bool)
    for k in range(dataset.num_classes):
        members = np.flatnonzero(dataset.y == k)
        chosen = members[rng.permutation(len(members))[:take[k]]]
        is_test[chosen] = True
    if is_test.all() or not is_test.any():
        raise InputError("split would leave one part empty")
    return dataset.subset(~is_test), dataset.subset(is_test)


def save_dataset(dataset: Dataset, path) -> None:
    lines = [f"{dataset.num_classes} {dataset.feature_dim} {len(dataset)}"]
    for label, row in zip(dataset.y, dataset.X):
        lines.append(" ".join([str(int(label) + 1), *(format(v, ".17g") for v in row)]))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _parse_number(tok, kind, lineno, col):
    try:
        return kind(tok)
    except ValueError:
        raise ParseError(f"cannot parse {tok!r} as {kind.__name__}", lineno, col) from None


def load_dataset(path) -> Dataset:
    text = Path(path).read_text(encoding="utf-8")
    lines = text.splitlines()
    if not lines or not lines[0].strip():
        raise ParseError("empty dataset file: missing 'K dim N' header", 1, 1)
    header = lines[0].split()
    if len(header) != 3:
        raise ParseError("header must be 'K dim N'", 1, 1)
    K, dim, N = (_parse_number(t, int, 1, i + 1) for i, t in enumerate(header))
    if K < 1 or dim < 1 or N < 0:
        raise ValidationError(f"invalid header values K={K} dim={dim} N={N}")
    body = [(i + 2, ln) for i, ln in enumerate(lines[1:]) if ln.strip()]
    if len(body) != N:
        raise ParseError(f"header declares {N} samples, found {len(body)}", len(lines) + 1)

    X = np.empty((N, dim))
    y = np.empty(N, dtype=np.int64)
    for n, (lineno, ln) in enumerate(body):
        toks = ln.split()
        if len(toks) != dim + 1:
            raise ParseError(f"expected {dim + 1} fields, got {len(toks)}", lineno, 1)
        label = _parse_number(toks[0], int, lineno, 1)
        if not 1 <= label <= K:
            raise ValidationError(f"line {lineno}: label {label} outside 1..{K}")
        y[n] = label - 1
        for c, tok in enumerate(toks[1:]):
            X[n, c] = _parse_number(tok, float, lineno, c + 2)
    return Dataset(X, y, K)
