"""Per-layer class means, normalized distances and their class probabilities.

For each layer j and class k the model keeps the mean training activation
``means[j][k]`` and a normalizer: the mean distance from *all* training samples
to that class mean at that layer. Distances divided by it average to exactly 1
over the training set, which puts every class and every layer on the same scale.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, InputError
from .nn import Network, forward_collect, softmax

NORMALIZER_FLOOR = 1e-12
DISTANCE_FLOOR = 1e-9
TRANSFORMS = ("reciprocal", "negated")


@dataclass(eq=False)
class ClassMeansModel:
    """``means[j]`` has shape (K, width_j); ``normalizers`` has shape (M, K).

    ``j`` is 0-based here (layer j+1 of the network). ``transform`` picks the
    distance-to-logit map used by :func:`class_probabilities`.
    """

    means: list[np.ndarray]
    normalizers: np.ndarray
    transform: str = "reciprocal"
    warnings: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.normalizers = np.asarray(self.normalizers, dtype=np.float64)
        if self.transform not in TRANSFORMS:
            raise InputError(f"unknown transform {self.transform!r}; expected one of {TRANSFORMS}")
        if self.normalizers.shape != (len(self.means), self.class_count):
            raise DimensionError("normalizers must have shape (layer_count, class_count)")
        if np.any(self.normalizers <= 0):
            raise InputError("normalizers must be positive")

    @property
    def layer_count(self) -> int:
        return len(self.means)

    @property
    def class_count(self) -> int:
        return self.means[0].shape[0]

    def widths(self) -> list[int]:
        return [m.shape[1] for m in self.means]


def compute_class_means(network: Network, X, y) -> list[np.ndarray]:
    """Mean layer output per class, from one forward pass (no parameter updates)."""
    y = np.asarray(y)
    counts = np.bincount(y, minlength=network.num_classes)
    empty = np.flatnonzero(counts == 0)
    if empty.size:
        raise InputError(f"class {int(empty[0]) + 1} has no training samples")
    outputs = forward_collect(network, X)
    return [np.stack([out[y == k].mean(axis=0) for k in range(network.num_classes)])
            for out in outputs]


def pairwise_distances(outputs: np.ndarray, means_at_layer: np.ndarray) -> np.ndarray:
    """Euclidean distances, (n, width) x (K, width) -> (n, K)."""
    diff = outputs[:, None, :] - means_at_layer[None, :, :]
    return np.sqrt(np.einsum("nkd,nkd->nk", diff, diff))


def compute_normalizers(network: Network, X, means: list[np.ndarray],
                        issues: list[str] | None = None) -> np.ndarray:
    """(M, K) array of average distance from every sample to each class mean.

    Zero averages are floored at ``NORMALIZER_FLOOR``; each occurrence raises a
    ``RuntimeWarning`` and is appended to ``issues`` when given.
    """
    outputs = forward_collect(network, X)
    if len(outputs) != len(means):
        raise DimensionError(f"{len(means)} mean layers for a {len(outputs)}-layer network")
    norm = np.stack([pairwise_distances(out, m).mean(axis=0) for out, m in zip(outputs, means)])
    for j, k in zip(*np.nonzero(norm <= 0)):
        msg = f"layer {j + 1}, class {k + 1}: zero mean distance, normalizer floored at {NORMALIZER_FLOOR}"
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
        if issues is not None:
            issues.append(msg)
    return np.maximum(norm, NORMALIZER_FLOOR)


def fit_class_means(network: Network, dataset, transform: str = "reciprocal") -> ClassMeansModel:
    means = compute_class_means(network, dataset.X, dataset.y)
    issues: list[str] = []
    norm = compute_normalizers(network, dataset.X, means, issues)
    return ClassMeansModel(means, norm, transform, issues)


def distances(layer_output, means_at_layer) -> np.ndarray:
    """Distances from one output vector (or a batch) to each of the K means."""
    x = np.asarray(layer_output, dtype=np.float64)
    m = np.asarray(means_at_layer, dtype=np.float64)
    if x.shape[-1] != m.shape[-1]:
        raise DimensionError(f"output width {x.shape[-1]} != mean width {m.shape[-1]}")
    if x.ndim == 1:
        return pairwise_distances(x[None], m)[0]
    return pairwise_distances(x, m)


def normalize_distances(raw, normalizer_at_layer) -> np.ndarray:
    return np.asarray(raw, dtype=np.float64) / np.asarray(normalizer_at_layer, dtype=np.float64)


def distance_logits(normalized, transform: str = "reciprocal") -> np.ndarray:
    d = np.maximum(np.asarray(normalized, dtype=np.float64), DISTANCE_FLOOR)
    if transform == "reciprocal":
        return 1.0 / d
    if transform == "negated":
        return -1.0 / d
    raise InputError(f"unknown transform {transform!r}")


def class_probabilities(normalized, transform: str = "reciprocal") -> np.ndarray:
    """Softmax over ``1/d`` (default) or the literal ``-1/d`` reading.

    With ``reciprocal`` the nearest class gets the highest probability.
    """
    return softmax(distance_logits(normalized, transform))


def layer_confidence(model: ClassMeansModel, j: int, layer_output):
    """(max probability, predicted class) at 0-based layer ``j``.

    The prediction is the argmax of the logits, which equals the argmax of the
    probabilities but stays exact when several probabilities round to 1.0.
    """
    d = normalize_distances(distances(layer_output, model.means[j]), model.normalizers[j])
    logits = distance_logits(d, model.transform)
    probs = softmax(logits)
    return np.max(probs, axis=-1), np.argmax(logits, axis=-1)


def nearest_mean_confusion(network: Network, dataset, means: list[np.ndarray], layer: int) -> np.ndarray:
    """K x K counts of (true class, nearest raw-distance class mean) at 1-based ``layer``."""
    if not 1 <= layer <= network.depth:
        raise InputError(f"layer {layer} outside 1..{network.depth}")
    out = forward_collect(network, dataset.X)[layer - 1]
    pred = np.argmin(pairwise_distances(out, means[layer - 1]), axis=1)
    K = network.num_classes
    conf = np.zeros((K, K), dtype=np.int64)
    np.add.at(conf, (dataset.y, pred), 1)
    return conf
