"""Internal classifiers: average-pool feature reduction followed by one linear layer."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from types import SimpleNamespace

import numpy as np

from .errors import DimensionError, InputError, PlacementError
from .nn import AvgPool, Dense, Network, TrainConfig, TrainLog, forward_collect, sgd_train, softmax
from .nn import entropy as _entropy
from .rng import Xoshiro256, derive_seed

DEFAULT_FRACTIONS = (0.15, 0.30, 0.45, 0.60, 0.75, 0.90)
MAX_POOLED_DIM = 64


class DecisionRule(str, enum.Enum):
    MAX_PROB = "maxprob"
    ENTROPY = "entropy"


@dataclass(eq=False)
class InternalClassifier:
    attach_after_layer: int  # 1-based backbone layer index
    head: Network  # [AvgPool, Dense(pooled -> K)]

    @property
    def pool(self) -> AvgPool:
        return self.head.layers[0]

    @property
    def linear(self) -> Dense:
        return self.head.layers[1]

    @property
    def pool_factor(self) -> int:
        return self.pool.factor

    @property
    def flops(self) -> int:
        """Pool + linear + softmax cost of one evaluation."""
        K = self.head.num_classes
        return self.pool.in_dim + 2 * self.linear.in_dim * K + K + 4 * K


@dataclass(eq=False)
class ICBundle:
    classifiers: list[InternalClassifier]
    placement_fractions: list[float] = field(default_factory=list)

    def __post_init__(self):
        attach = self.attach_points
        if any(b <= a for a, b in zip(attach, attach[1:])):
            raise PlacementError(f"attach points must strictly increase, got {attach}")

    def __len__(self):
        return len(self.classifiers)

    @property
    def attach_points(self) -> list[int]:
        return [ic.attach_after_layer for ic in self.classifiers]


def pool_factor_for(width: int) -> int:
    """Smallest power of two dividing ``width`` with ``width / f <= 64``.

    Widths with no such power of two fall back to their smallest qualifying divisor.
    """
    f = 1
    while width // f > MAX_POOLED_DIM and width % (2 * f) == 0:
        f *= 2
    if width // f <= MAX_POOLED_DIM:
        return f
    return next(d for d in range(2, width + 1) if width % d == 0 and width // d <= MAX_POOLED_DIM)


def place_ics(network: Network, fractions) -> list[int]:
    """1-based attach layers: for each fraction, the first layer whose cumulative
    FLOPs share reaches it. Repeated indices collapse to one."""
    if network.depth < 2:
        raise PlacementError("internal classifiers need a network with at least 2 layers")
    fractions = [float(f) for f in fractions]
    if not fractions:
        raise InputError("need at least one placement fraction")
    if any(not 0.0 < f < 1.0 for f in fractions) or any(b <= a for a, b in zip(fractions, fractions[1:])):
        raise InputError(f"fractions must be strictly increasing in (0, 1), got {fractions}")
    cum = network.cumulative_flops()
    total = int(cum[-1])
    indices: list[int] = []
    for f in fractions:
        # integer comparison avoids rounding at exact boundaries
        j = int(np.argmax(cum >= f * total)) + 1
        if not indices or j != indices[-1]:
            indices.append(j)
    return indices


def build_bundle(network: Network, fractions=DEFAULT_FRACTIONS, seed: int = 0) -> ICBundle:
    """Place classifiers and give their linear layers He-uniform initial weights."""
    K = network.num_classes
    classifiers = []
    for i, j in enumerate(place_ics(network, fractions)):
        width = network.layers[j - 1].out_dim
        f = pool_factor_for(width)
        pooled = width // f
        rng = Xoshiro256(derive_seed(seed, "ic-init", i))
        bound = math.sqrt(6.0 / pooled)
        w = rng.uniform(-bound, bound, K * pooled).reshape(K, pooled)
        head = Network([AvgPool(width, f), Dense(w, np.zeros(K))], K)
        classifiers.append(InternalClassifier(j, head))
    return ICBundle(classifiers, list(fractions))


def train_ics(network: Network, bundle: ICBundle, dataset, config: TrainConfig) -> list[TrainLog]:
    """Train each head independently on frozen backbone features."""
    outputs = forward_collect(network, dataset.X)
    logs = []
    for i, ic in enumerate(bundle.classifiers):
        feats = SimpleNamespace(X=outputs[ic.attach_after_layer - 1], y=dataset.y)
        logs.append(sgd_train(ic.head, feats, config, stream=f"ic-shuffle-{i}"))
    return logs


def ic_predict(ic: InternalClassifier, layer_output) -> np.ndarray:
    x = np.asarray(layer_output, dtype=np.float64)
    if x.shape[-1] != ic.pool.in_dim:
        raise DimensionError(
            f"classifier after layer {ic.attach_after_layer} expects {ic.pool.in_dim} features, got {x.shape[-1]}"
        )
    return softmax(ic.linear.forward(ic.pool.forward(x)))


def threshold_range(rule: DecisionRule, num_classes: int) -> tuple[float, float]:
    rule = DecisionRule(rule)
    return (0.0, 1.0) if rule is DecisionRule.MAX_PROB else (0.0, math.log(num_classes))


def check_threshold(rule: DecisionRule, threshold: float, num_classes: int) -> None:
    lo, hi = threshold_range(rule, num_classes)
    if not lo <= threshold <= hi:
        raise InputError(f"{DecisionRule(rule).value} threshold {threshold} outside [{lo}, {hi}]")


def confidence(probs, rule: DecisionRule):
    """Max probability or entropy, the quantity compared against the threshold."""
    if DecisionRule(rule) is DecisionRule.MAX_PROB:
        return np.max(probs, axis=-1)
    return _entropy(probs)


def fires(value, rule: DecisionRule, threshold):
    """Strict exit test: ``value > T`` for max-prob, ``value < T`` for entropy."""
    if DecisionRule(rule) is DecisionRule.MAX_PROB:
        return value > threshold
    return value < threshold


def ic_exit_decision(probs, rule: DecisionRule, threshold: float) -> bool:
    probs = np.asarray(probs, dtype=np.float64)
    check_threshold(rule, threshold, probs.shape[-1])
    return bool(fires(confidence(probs, rule), rule, threshold))
