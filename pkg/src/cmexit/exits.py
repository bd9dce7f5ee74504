"""Threshold-gated early-exit inference and dataset-level evaluation.

Three policies share one loop shape: run the backbone layer by layer, test a
confidence against a threshold at each decision point, and stop at the first
point that fires. Without an exit the backbone's own output decides.

FLOPs accounting charges backbone layers up to the stopping layer plus, by
default, the cost of every decision evaluated on the way:

* class means at a layer of width w: ``3*w*K`` (distances) + ``K`` (normalize) + ``4*K`` (softmax)
* internal classifier: see :attr:`InternalClassifier.flops`
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Union

import numpy as np

from .class_means import ClassMeansModel, layer_confidence
from .errors import InputError
from .internal import DecisionRule, ICBundle, check_threshold, confidence, fires, ic_predict
from .nn import Network, forward_collect


def class_means_overhead(width: int, num_classes: int) -> int:
    return 3 * width * num_classes + num_classes + 4 * num_classes


@dataclass(frozen=True)
class ClassMeansPolicy:
    model: ClassMeansModel
    thresholds: tuple[float, ...]

    name = "class-means"


@dataclass(frozen=True)
class InternalPolicy:
    bundle: ICBundle
    rule: DecisionRule
    thresholds: tuple[float, ...]

    @property
    def name(self):
        return f"internal-{DecisionRule(self.rule).value}"


@dataclass(frozen=True)
class CombinedPolicy:
    bundle: ICBundle
    model: ClassMeansModel
    ic_thresholds: tuple[float, ...]
    cm_thresholds: tuple[float, ...]

    name = "combined"


ExitPolicy = Union[ClassMeansPolicy, InternalPolicy, CombinedPolicy]


@dataclass
class TraceStep:
    layer: int  # 1-based backbone layer the decision was taken after
    gate: str  # "cm" or "ic"
    confidence: float
    threshold: float
    exited: bool


@dataclass
class InferenceResult:
    prediction: int  # 0-based class
    exit_point: int | None  # 0-based decision point, None = ran to the end
    exit_layer: int | None  # 1-based backbone layer, None = FINAL
    flops_used: int
    trace: list[TraceStep] = field(default_factory=list)


def _check_length(thresholds, expected, what):
    if len(thresholds) != expected:
        raise InputError(f"{what}: expected {expected} thresholds, got {len(thresholds)}")


def _check_unit(thresholds, what):
    for t in thresholds:
        if not 0.0 <= t <= 1.0:
            raise InputError(f"{what}: threshold {t} outside [0, 1]")


def _final(x, flops, trace):
    pred = int(np.argmax(x))
    return InferenceResult(pred, None, None, flops, trace)


def infer_class_means(network: Network, model: ClassMeansModel, thresholds, x,
                      include_overhead: bool = True) -> InferenceResult:
    """Exit after the first layer whose class-means confidence exceeds its threshold."""
    _check_length(thresholds, network.depth, "class-means")
    _check_unit(thresholds, "class-means")
    x = np.asarray(x, dtype=np.float64)
    K = network.num_classes
    flops = 0
    trace = []
    for j, layer in enumerate(network.layers):
        x = layer.forward(x)
        flops += network.flops_per_layer[j]
        if include_overhead:
            flops += class_means_overhead(layer.out_dim, K)
        conf, pred = layer_confidence(model, j, x)
        hit = bool(conf > thresholds[j])
        trace.append(TraceStep(j + 1, "cm", float(conf), float(thresholds[j]), hit))
        if hit:
            return InferenceResult(int(pred), j, j + 1, flops, trace)
    return _final(x, flops, trace)


def _run_to(network, x, start, stop):
    for j in range(start, stop):
        x = network.layers[j].forward(x)
    return x


def infer_internal(network: Network, bundle: ICBundle, rule, thresholds, x,
                   include_overhead: bool = True) -> InferenceResult:
    rule = DecisionRule(rule)
    _check_length(thresholds, len(bundle), "internal")
    for t in thresholds:
        check_threshold(rule, t, network.num_classes)
    x = np.asarray(x, dtype=np.float64)
    cum = network.cumulative_flops()
    overhead = 0
    done = 0
    trace = []
    for i, ic in enumerate(bundle.classifiers):
        x = _run_to(network, x, done, ic.attach_after_layer)
        done = ic.attach_after_layer
        if include_overhead:
            overhead += ic.flops
        probs = ic_predict(ic, x)
        value = float(confidence(probs, rule))
        hit = bool(fires(value, rule, thresholds[i]))
        trace.append(TraceStep(done, "ic", value, float(thresholds[i]), hit))
        if hit:
            return InferenceResult(int(np.argmax(probs)), i, done, int(cum[done - 1]) + overhead, trace)
    x = _run_to(network, x, done, network.depth)
    return _final(x, network.total_flops + overhead, trace)


def infer_combined(network: Network, bundle: ICBundle, model: ClassMeansModel, ic_thresholds,
                   cm_thresholds, x, include_overhead: bool = True) -> InferenceResult:
    """IC max-prob gate first; if it declines, class means at the same layer may
    still force the exit, and the IC's prediction is returned."""
    _check_length(ic_thresholds, len(bundle), "combined (ic)")
    _check_length(cm_thresholds, len(bundle), "combined (cm)")
    _check_unit(ic_thresholds, "combined (ic)")
    _check_unit(cm_thresholds, "combined (cm)")
    x = np.asarray(x, dtype=np.float64)
    K = network.num_classes
    cum = network.cumulative_flops()
    overhead = 0
    done = 0
    trace = []
    for i, ic in enumerate(bundle.classifiers):
        x = _run_to(network, x, done, ic.attach_after_layer)
        done = ic.attach_after_layer
        probs = ic_predict(ic, x)
        ic_pred = int(np.argmax(probs))
        if include_overhead:
            overhead += ic.flops
        ic_conf = float(np.max(probs))
        hit = ic_conf > ic_thresholds[i]
        trace.append(TraceStep(done, "ic", ic_conf, float(ic_thresholds[i]), bool(hit)))
        if hit:
            return InferenceResult(ic_pred, i, done, int(cum[done - 1]) + overhead, trace)
        if include_overhead:
            overhead += class_means_overhead(x.shape[-1], K)
        cm_conf, _ = layer_confidence(model, done - 1, x)
        hit = cm_conf > cm_thresholds[i]
        trace.append(TraceStep(done, "cm", float(cm_conf), float(cm_thresholds[i]), bool(hit)))
        if hit:
            return InferenceResult(ic_pred, i, done, int(cum[done - 1]) + overhead, trace)
    x = _run_to(network, x, done, network.depth)
    return _final(x, network.total_flops + overhead, trace)


def decision_points(network: Network, policy: ExitPolicy) -> int:
    return network.depth if isinstance(policy, ClassMeansPolicy) else len(policy.bundle)


def infer(network: Network, policy: ExitPolicy, x, include_overhead: bool = True) -> InferenceResult:
    if isinstance(policy, ClassMeansPolicy):
        return infer_class_means(network, policy.model, policy.thresholds, x, include_overhead)
    if isinstance(policy, InternalPolicy):
        return infer_internal(network, policy.bundle, policy.rule, policy.thresholds, x, include_overhead)
    return infer_combined(network, policy.bundle, policy.model, policy.ic_thresholds,
                          policy.cm_thresholds, x, include_overhead)


@dataclass
class EvalSummary:
    accuracy: float
    mean_flops: float
    exit_histogram: list[int]  # one count per decision point, then FINAL
    correct: int
    total: int


def evaluate(network: Network, policy: ExitPolicy, dataset, include_overhead: bool = True,
             traces: list | None = None) -> EvalSummary:
    """Run the policy on every sample; optionally append each result to ``traces``."""
    if len(dataset) == 0:
        raise InputError("cannot evaluate on an empty dataset")
    points = decision_points(network, policy)
    hist = [0] * (points + 1)
    correct = 0
    flops = 0
    for x, label in zip(dataset.X, dataset.y):
        res = infer(network, policy, x, include_overhead)
        hist[points if res.exit_point is None else res.exit_point] += 1
        correct += int(res.prediction == label)
        flops += res.flops_used
        if traces is not None:
            traces.append(res)
    n = len(dataset)
    return EvalSummary(correct / n, flops / n, hist, correct, n)


class DecisionTable:
    """Per-sample confidences and predictions at every decision point.

    None of these depend on thresholds, so one table evaluates any number of
    threshold vectors with array operations. Results agree exactly with
    :func:`evaluate`.
    """

    def __init__(self, network: Network, dataset, model: ClassMeansModel | None = None,
                 bundle: ICBundle | None = None, include_overhead: bool = True):
        self.network = network
        self.y = np.asarray(dataset.y)
        self.n = len(self.y)
        if self.n == 0:
            raise InputError("cannot evaluate on an empty dataset")
        K = network.num_classes
        outputs = forward_collect(network, dataset.X)
        self.final_pred = np.argmax(outputs[-1], axis=1)
        self.cum = network.cumulative_flops()
        self.total = int(self.cum[-1])
        self.model = model
        self.bundle = bundle
        scale = 1 if include_overhead else 0

        if model is not None:
            conf, pred = zip(*(layer_confidence(model, j, out) for j, out in enumerate(outputs)))
            self.cm_conf = np.stack(conf, axis=1)
            self.cm_pred = np.stack(pred, axis=1)
            self.cm_overhead = scale * np.array(
                [class_means_overhead(w, K) for w in network.output_dims], dtype=np.int64)

        if bundle is not None:
            probs = [ic_predict(ic, outputs[ic.attach_after_layer - 1]) for ic in bundle.classifiers]
            self.ic_maxprob = np.stack([p.max(axis=1) for p in probs], axis=1)
            self.ic_entropy = np.stack([confidence(p, DecisionRule.ENTROPY) for p in probs], axis=1)
            self.ic_pred = np.stack([p.argmax(axis=1) for p in probs], axis=1)
            self.attach = np.array(bundle.attach_points)
            self.ic_overhead = scale * np.array([ic.flops for ic in bundle.classifiers], dtype=np.int64)
            if model is not None:
                self.cm_conf_at_ic = self.cm_conf[:, self.attach - 1]
                self.cm_overhead_at_ic = self.cm_overhead[self.attach - 1]

    def _summarize(self, point, pred, cost, points):
        correct = (pred == self.y[None, :]).sum(axis=1)
        flops = cost.sum(axis=1, dtype=np.int64)
        hist = np.stack([(point == p).sum(axis=1) for p in range(points + 1)], axis=1)
        return correct, flops, hist

    @staticmethod
    def _first(exits):
        any_exit = exits.any(axis=2)
        first = np.argmax(exits, axis=2)
        return any_exit, first

    def _gather(self, table, first):
        return np.take_along_axis(np.broadcast_to(table, (first.shape[0],) + table.shape),
                                  first[:, :, None], axis=2)[:, :, 0]

    def class_means(self, thresholds: np.ndarray):
        """thresholds (C, M) -> (correct (C,), flops_sum (C,), histogram (C, M+1))."""
        T = np.atleast_2d(thresholds)
        M = self.network.depth
        exits = self.cm_conf[None] > T[:, None, :]
        any_exit, first = self._first(exits)
        point = np.where(any_exit, first, M)
        pred = np.where(any_exit, self._gather(self.cm_pred, first), self.final_pred[None])
        cost_at = np.append(self.cum + np.cumsum(self.cm_overhead), self.total + self.cm_overhead.sum())
        return self._summarize(point, pred, cost_at[point], M)

    def internal(self, rule, thresholds: np.ndarray):
        T = np.atleast_2d(thresholds)
        P = len(self.bundle)
        values = self.ic_maxprob if DecisionRule(rule) is DecisionRule.MAX_PROB else self.ic_entropy
        exits = fires(values[None], rule, T[:, None, :])
        any_exit, first = self._first(exits)
        point = np.where(any_exit, first, P)
        pred = np.where(any_exit, self._gather(self.ic_pred, first), self.final_pred[None])
        cost_at = np.append(self.cum[self.attach - 1] + np.cumsum(self.ic_overhead),
                            self.total + self.ic_overhead.sum())
        return self._summarize(point, pred, cost_at[point], P)

    def combined(self, ic_thresholds: np.ndarray, cm_thresholds: np.ndarray):
        Ti = np.atleast_2d(ic_thresholds)
        Tc = np.atleast_2d(cm_thresholds)
        P = len(self.bundle)
        ic_exit = self.ic_maxprob[None] > Ti[:, None, :]
        cm_exit = self.cm_conf_at_ic[None] > Tc[:, None, :]
        any_exit, first = self._first(ic_exit | cm_exit)
        point = np.where(any_exit, first, P)
        pred = np.where(any_exit, self._gather(self.ic_pred, first), self.final_pred[None])
        both = self.ic_overhead + self.cm_overhead_at_ic
        before = np.concatenate([[0], np.cumsum(both)[:-1]])
        ic_cost = np.append(self.cum[self.attach - 1] + before + self.ic_overhead, self.total + both.sum())
        cm_cost = np.append(self.cum[self.attach - 1] + before + both, self.total + both.sum())
        ic_hit = np.take_along_axis(ic_exit, first[:, :, None], axis=2)[:, :, 0]
        cost = np.where(ic_hit, ic_cost[point], cm_cost[point])
        return self._summarize(point, pred, cost, P)
