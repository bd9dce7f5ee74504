"""Minimal feed-forward network with hand-written backpropagation.

Tensors are plain float64 numpy arrays. A single sample is a 1-D vector;
every operation also accepts a 2-D batch ``(n, features)`` and acts row-wise.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from typing import Union

import numpy as np

from .errors import DimensionError, InputError
from .rng import Xoshiro256, derive_seed


@dataclass(eq=False)
class Dense:
    """Affine map ``x @ weight.T + bias``; ``weight`` has shape (out_dim, in_dim)."""

    weight: np.ndarray
    bias: np.ndarray | None = None

    kind = "dense"

    def __post_init__(self):
        self.weight = np.ascontiguousarray(self.weight, dtype=np.float64)
        if self.weight.ndim != 2:
            raise DimensionError("dense weight must be 2-D (out_dim, in_dim)")
        if self.bias is not None:
            self.bias = np.ascontiguousarray(self.bias, dtype=np.float64)
            if self.bias.shape != (self.out_dim,):
                raise DimensionError(f"bias shape {self.bias.shape} != ({self.out_dim},)")

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]

    @property
    def has_bias(self) -> bool:
        return self.bias is not None

    def params(self) -> list[np.ndarray]:
        return [self.weight] if self.bias is None else [self.weight, self.bias]

    def forward(self, x):
        y = x @ self.weight.T
        if self.bias is not None:
            y = y + self.bias
        return y

    def backward(self, x, grad_out):
        grads = [grad_out.T @ x]
        if self.bias is not None:
            grads.append(grad_out.sum(axis=0))
        return grad_out @ self.weight, grads


@dataclass(eq=False)
class ReLU:
    size: int

    kind = "relu"

    @property
    def in_dim(self) -> int:
        return self.size

    @property
    def out_dim(self) -> int:
        return self.size

    def params(self) -> list[np.ndarray]:
        return []

    def forward(self, x):
        return np.maximum(x, 0.0)

    def backward(self, x, grad_out):
        return grad_out * (x > 0), []


@dataclass(eq=False)
class AvgPool:
    """Mean over contiguous groups of ``factor`` features: n -> n / factor."""

    size: int
    factor: int

    kind = "avgpool"

    def __post_init__(self):
        if self.factor < 1 or self.size % self.factor:
            raise DimensionError(f"pool factor {self.factor} does not divide length {self.size}")

    @property
    def in_dim(self) -> int:
        return self.size

    @property
    def out_dim(self) -> int:
        return self.size // self.factor

    def params(self) -> list[np.ndarray]:
        return []

    def forward(self, x):
        if self.factor == 1:
            return x
        return x.reshape(*x.shape[:-1], self.out_dim, self.factor).mean(axis=-1)

    def backward(self, x, grad_out):
        if self.factor == 1:
            return grad_out, []
        return np.repeat(grad_out, self.factor, axis=-1) / self.factor, []


Layer = Union[Dense, ReLU, AvgPool]


def layer_flops(layer: Layer) -> int:
    """Additions plus multiplications for one forward pass of ``layer``.

    Dense counts a multiply-add as 2 (``2*in*out``) plus one add per bias entry;
    ReLU and AvgPool count one operation per input element.
    """
    if isinstance(layer, Dense):
        return 2 * layer.in_dim * layer.out_dim + (layer.out_dim if layer.has_bias else 0)
    return layer.in_dim


@dataclass(eq=False)
class Network:
    layers: list[Layer]
    num_classes: int
    flops_per_layer: list[int] = field(init=False)

    def __post_init__(self):
        if not self.layers:
            raise DimensionError("network needs at least one layer")
        for j in range(1, len(self.layers)):
            prev, cur = self.layers[j - 1], self.layers[j]
            if prev.out_dim != cur.in_dim:
                raise DimensionError(
                    f"layer {j + 1} expects {cur.in_dim} inputs but layer {j} emits {prev.out_dim}"
                )
        if self.layers[-1].out_dim != self.num_classes:
            raise DimensionError(
                f"final layer emits {self.layers[-1].out_dim} values, expected {self.num_classes} classes"
            )
        self.flops_per_layer = [layer_flops(layer) for layer in self.layers]

    @property
    def depth(self) -> int:
        return len(self.layers)

    @property
    def input_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def output_dims(self) -> list[int]:
        return [layer.out_dim for layer in self.layers]

    @property
    def total_flops(self) -> int:
        return sum(self.flops_per_layer)

    def cumulative_flops(self) -> np.ndarray:
        """``out[j-1]`` = FLOPs of layers 1..j (int64)."""
        return np.cumsum(np.asarray(self.flops_per_layer, dtype=np.int64))

    def parameters(self) -> list[np.ndarray]:
        return [p for layer in self.layers for p in layer.params()]


def init_mlp(input_dim: int, hidden: tuple[int, ...] | list[int], num_classes: int, seed: int) -> Network:
    """Dense/ReLU stack with He-uniform weights and zero biases."""
    rng = Xoshiro256(derive_seed(seed, "init"))
    dims = [input_dim, *hidden, num_classes]
    layers: list[Layer] = []
    for i in range(len(dims) - 1):
        fan_in, fan_out = dims[i], dims[i + 1]
        bound = math.sqrt(6.0 / fan_in)
        w = rng.uniform(-bound, bound, fan_out * fan_in).reshape(fan_out, fan_in)
        layers.append(Dense(w, np.zeros(fan_out)))
        if i < len(dims) - 2:
            layers.append(ReLU(fan_out))
    return Network(layers, num_classes)


def forward_collect(network: Network, x) -> list[np.ndarray]:
    """Outputs of every layer, ``out[j-1]`` being the output of layer j."""
    x = np.asarray(x, dtype=np.float64)
    outputs = []
    for j, layer in enumerate(network.layers, start=1):
        if x.ndim == 0 or x.shape[-1] != layer.in_dim:
            got = x.shape[-1] if x.ndim else 0
            raise DimensionError(f"layer {j} ({layer.kind}) expects {layer.in_dim} inputs, got {got}")
        x = layer.forward(x)
        outputs.append(x)
    if not np.all(np.isfinite(x)):
        raise FloatingPointError("non-finite network output")
    return outputs


def forward(network: Network, x) -> np.ndarray:
    return forward_collect(network, x)[-1]


def predict(network: Network, x) -> np.ndarray:
    return np.argmax(forward(network, x), axis=-1)


def softmax(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - np.max(z, axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def entropy(probs) -> np.ndarray | float:
    """Natural-log entropy with ``0 ln 0 = 0``."""
    p = np.asarray(probs, dtype=np.float64)
    terms = np.where(p > 0, p * np.log(np.where(p > 0, p, 1.0)), 0.0)
    h = -terms.sum(axis=-1)
    return np.maximum(h, 0.0)


def _check_labels(labels, num_classes):
    labels = np.asarray(labels)
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise InputError(f"label outside [0, {num_classes})")
    return labels.astype(np.int64)


def cross_entropy(network: Network, x, labels) -> float:
    """Mean softmax cross-entropy of the final layer over a batch."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    labels = _check_labels(np.atleast_1d(labels), network.num_classes)
    logits = forward(network, x)
    z = logits - logits.max(axis=1, keepdims=True)
    log_p = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    return float(-log_p[np.arange(len(labels)), labels].mean())


def backward(network: Network, x, labels) -> list[np.ndarray]:
    """Gradients of the mean cross-entropy, one array per entry of ``network.parameters()``.

    ``x`` may be one sample with an integer label or a batch with a label array.
    Labels are 0-based class indices.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    labels = _check_labels(np.atleast_1d(labels), network.num_classes)
    if len(labels) != len(x):
        raise InputError(f"{len(x)} samples but {len(labels)} labels")
    outputs = forward_collect(network, x)
    grad = softmax(outputs[-1])
    grad[np.arange(len(labels)), labels] -= 1.0
    grad /= len(labels)

    per_layer = []
    for j in range(network.depth - 1, -1, -1):
        layer_in = outputs[j - 1] if j > 0 else x
        grad, g = network.layers[j].backward(layer_in, grad)
        per_layer.append(g)
    return [g for gs in reversed(per_layer) for g in gs]


def parameter_checksum(network: Network) -> str:
    h = hashlib.sha256()
    for p in network.parameters():
        h.update(np.ascontiguousarray(p).tobytes())
    return h.hexdigest()


@dataclass
class TrainConfig:
    learning_rate: float = 0.01
    momentum: float = 0.9
    epochs: int = 20
    batch_size: int = 32
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate >= 0:
            # 0 is allowed: it is the documented no-op training run
            raise InputError("learning_rate must be non-negative")
        if not 0.0 <= self.momentum < 1.0:
            raise InputError("momentum must lie in [0, 1)")
        if self.epochs < 0 or self.batch_size < 1:
            raise InputError("epochs must be >= 0 and batch_size >= 1")
        if not 0 <= self.seed < 2**64:
            raise InputError("seed must be a 64-bit unsigned integer")


@dataclass
class TrainLog:
    epoch_losses: list[float] = field(default_factory=list)


def sgd_train(network: Network, dataset, config: TrainConfig, stream: str = "shuffle") -> TrainLog:
    """Mini-batch SGD with heavy-ball momentum on softmax cross-entropy.

    Parameters are updated in place. ``dataset`` needs ``X`` (n, d) and 0-based
    labels ``y``. Shuffling draws from ``derive_seed(config.seed, stream, epoch)``.
    """
    X = np.asarray(dataset.X, dtype=np.float64)
    y = np.asarray(dataset.y)
    if len(X) == 0:
        raise InputError("cannot train on an empty dataset")
    y = _check_labels(y, network.num_classes)

    params = network.parameters()
    velocity = [np.zeros_like(p) for p in params]
    log = TrainLog()
    n = len(X)
    for epoch in range(config.epochs):
        order = Xoshiro256(derive_seed(config.seed, stream, epoch)).permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            total += cross_entropy(network, X[idx], y[idx]) * len(idx)
            grads = backward(network, X[idx], y[idx])
            for p, v, g in zip(params, velocity, grads):
                v *= config.momentum
                v += g
                p -= config.learning_rate * v
        epoch_loss = total / n
        if not math.isfinite(epoch_loss):
            raise FloatingPointError(f"training diverged at epoch {epoch + 1}")
        log.epoch_losses.append(epoch_loss)
    return log
