import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cmexit.errors import InputError
from cmexit.exits import (ClassMeansPolicy, CombinedPolicy, DecisionTable, InternalPolicy,
                          class_means_overhead, evaluate, infer_class_means, infer_combined,
                          infer_internal)
from cmexit.internal import DecisionRule
from cmexit.nn import forward_collect, predict


# -- independent reference simulation -----------------------------------------

def ref_softmax(z):
    m = max(z)
    e = [math.exp(v - m) for v in z]
    return [v / sum(e) for v in e]


def ref_cm_gate(out, means_j, norm_j):
    """(max prob, argmin normalized distance) straight from the definitions."""
    d = [math.sqrt(sum((a - b) ** 2 for a, b in zip(out, c))) / n for c, n in zip(means_j, norm_j)]
    probs = ref_softmax([1.0 / max(v, 1e-9) for v in d])
    return max(probs), min(range(len(d)), key=lambda k: d[k])


def ref_ic(ic, out):
    f = ic.pool_factor
    pooled = [sum(out[g * f:(g + 1) * f]) / f for g in range(len(out) // f)]
    w, b = ic.linear.weight, ic.linear.bias
    logits = [sum(w[k, i] * pooled[i] for i in range(len(pooled))) + b[k] for k in range(len(b))]
    return ref_softmax(logits)


def ref_class_means(net, model, T, x):
    outs = forward_collect(net, x)
    flops = 0
    for j, out in enumerate(outs):
        flops += net.flops_per_layer[j] + 3 * len(out) * net.num_classes + 5 * net.num_classes
        conf, pred = ref_cm_gate(out, model.means[j], model.normalizers[j])
        if conf > T[j]:
            return j, pred, flops
    return None, int(np.argmax(outs[-1])), flops


def ref_combined(net, bundle, model, Ti, Tc, x):
    """Two gates per IC point: IC max-prob, then class-means consultation."""
    outs = forward_collect(net, x)
    for i, ic in enumerate(bundle.classifiers):
        out = outs[ic.attach_after_layer - 1]
        probs = ref_ic(ic, out)
        ic_pred = max(range(len(probs)), key=lambda k: probs[k])
        if max(probs) > Ti[i]:
            return i, ic_pred
        conf, _ = ref_cm_gate(out, model.means[ic.attach_after_layer - 1],
                              model.normalizers[ic.attach_after_layer - 1])
        if conf > Tc[i]:
            return i, ic_pred
    return None, int(np.argmax(outs[-1]))


def ref_internal(net, bundle, rule, T, x):
    outs = forward_collect(net, x)
    for i, ic in enumerate(bundle.classifiers):
        probs = ref_ic(ic, outs[ic.attach_after_layer - 1])
        if rule is DecisionRule.MAX_PROB:
            hit = max(probs) > T[i]
        else:
            hit = -sum(p * math.log(p) for p in probs if p > 0) < T[i]
        if hit:
            return i, max(range(len(probs)), key=lambda k: probs[k])
    return None, int(np.argmax(outs[-1]))


# -- class-means policy --------------------------------------------------------

def overhead_all(net):
    return sum(class_means_overhead(w, net.num_classes) for w in net.output_dims)


def test_unattainable_thresholds_fall_back_to_backbone(desk):
    net, _, test, model, _ = desk
    T = [1.0] * net.depth
    for x, p in zip(test.X, predict(net, test.X)):
        res = infer_class_means(net, model, T, x)
        assert res.exit_layer is None and res.prediction == p
        assert res.flops_used == net.total_flops + overhead_all(net)


def test_zero_first_threshold_exits_at_layer_one(desk):
    net, _, test, model, _ = desk
    T = [0.0] + [1.0] * (net.depth - 1)
    for x in test.X:
        res = infer_class_means(net, model, T, x)
        _, want = ref_cm_gate(forward_collect(net, x)[0], model.means[0], model.normalizers[0])
        assert (res.exit_layer, res.prediction) == (1, want)
        assert res.flops_used == net.flops_per_layer[0] + class_means_overhead(net.output_dims[0], 4)


@pytest.mark.parametrize("seed", range(5))
def test_random_thresholds_match_reference(desk, seed):
    net, _, test, model, _ = desk
    T = np.random.default_rng(seed).uniform(0.3, 1.0, net.depth)
    for x in test.X[:10]:
        res = infer_class_means(net, model, T, x)
        point, pred, flops = ref_class_means(net, model, T, x)
        assert (res.exit_point, res.prediction, res.flops_used) == (point, pred, flops)


def test_trace_consistency(desk):
    net, _, test, model, _ = desk
    T = np.random.default_rng(0).uniform(0.3, 1.0, net.depth)
    for x in test.X[:20]:
        res = infer_class_means(net, model, T, x)
        flags = [s.exited for s in res.trace]
        if res.exit_layer is None:
            assert len(flags) == net.depth and not any(flags)
        else:
            assert flags == [False] * (res.exit_layer - 1) + [True]


def test_threshold_length_and_range(desk):
    net, _, test, model, bundle = desk
    with pytest.raises(InputError):
        infer_class_means(net, model, [0.5] * (net.depth - 1), test.X[0])
    with pytest.raises(InputError):
        infer_class_means(net, model, [1.5] * net.depth, test.X[0])
    with pytest.raises(InputError):
        infer_internal(net, bundle, DecisionRule.MAX_PROB, [0.5], test.X[0])


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.integers(0, 14), st.floats(0, 1))
def test_raising_a_threshold_never_exits_earlier(desk, seed, j, bump):
    net, _, test, model, _ = desk
    table = DecisionTable(net, test, model)
    T = np.random.default_rng(seed).uniform(0.3, 1.0, net.depth)
    T2 = T.copy()
    T2[j] = max(T[j], bump)
    _, flops_a, _ = table.class_means(T)
    _, flops_b, _ = table.class_means(T2)
    assert flops_b[0] >= flops_a[0]
    for x in test.X[:10]:
        a = infer_class_means(net, model, T, x).exit_point
        b = infer_class_means(net, model, T2, x).exit_point
        assert (b if b is not None else 99) >= (a if a is not None else 99)


# -- IC and combined policies ----------------------------------------------------

def test_internal_fallback_and_overhead(desk):
    net, _, test, _, bundle = desk
    ic_cost = sum(ic.flops for ic in bundle.classifiers)
    for x, p in zip(test.X, predict(net, test.X)):
        res = infer_internal(net, bundle, DecisionRule.MAX_PROB, [1.0] * len(bundle), x)
        assert res.prediction == p and res.flops_used == net.total_flops + ic_cost


def test_entropy_at_log_k_exits_at_first_ic(desk):
    net, _, test, _, bundle = desk
    T = [math.log(4)] * len(bundle)
    for x in test.X:
        res = infer_internal(net, bundle, DecisionRule.ENTROPY, T, x)
        assert res.exit_point == 0


@pytest.mark.parametrize("rule", list(DecisionRule))
def test_internal_grid_matches_reference(desk, rule):
    net, _, test, _, bundle = desk
    hi = 1.0 if rule is DecisionRule.MAX_PROB else math.log(4)
    for t in np.linspace(0, hi, 5):
        T = [t] * len(bundle)
        for x in test.X[:10]:
            res = infer_internal(net, bundle, rule, T, x)
            assert (res.exit_point, res.prediction) == ref_internal(net, bundle, rule, T, x)


def test_combined_without_consultation_equals_internal(desk):
    net, _, test, model, bundle = desk
    Ti = np.random.default_rng(1).uniform(0.5, 1.0, len(bundle))
    for x in test.X[:20]:
        a = infer_combined(net, bundle, model, Ti, [1.0] * len(bundle), x)
        b = infer_internal(net, bundle, DecisionRule.MAX_PROB, Ti, x)
        assert (a.exit_point, a.prediction) == (b.exit_point, b.prediction)


def test_forced_consultation_exits_at_first_ic_with_ic_prediction(desk):
    net, _, test, model, bundle = desk
    first = bundle.classifiers[0]
    for x in test.X:
        res = infer_combined(net, bundle, model, [1.0] * len(bundle), [0.0] * len(bundle), x)
        probs = ref_ic(first, forward_collect(net, x)[first.attach_after_layer - 1])
        assert res.exit_point == 0
        assert res.prediction == int(np.argmax(probs))


def test_combined_grid_matches_two_gate_reference(desk):
    net, _, test, model, bundle = desk
    grid = np.linspace(0, 1, 5)
    P = len(bundle)
    for ti, tc in itertools.product(grid, grid):
        for x in test.X[:20]:
            res = infer_combined(net, bundle, model, [ti] * P, [tc] * P, x)
            assert (res.exit_point, res.prediction) == ref_combined(net, bundle, model, [ti] * P, [tc] * P, x)


# -- evaluation ------------------------------------------------------------------

def test_evaluate_counts(desk):
    net, _, test, model, _ = desk
    T = tuple(np.random.default_rng(3).uniform(0.3, 1.0, net.depth))
    summary = evaluate(net, ClassMeansPolicy(model, T), test)
    assert sum(summary.exit_histogram) == len(test)
    correct = sum(infer_class_means(net, model, T, x).prediction == y for x, y in zip(test.X, test.y))
    assert summary.correct == correct and summary.accuracy == correct / len(test)


def test_always_exit_at_layer_one_cost(desk):
    net, _, test, model, _ = desk
    summary = evaluate(net, ClassMeansPolicy(model, (0.0,) * net.depth), test)
    assert summary.mean_flops == net.flops_per_layer[0] + class_means_overhead(net.output_dims[0], 4)
    assert summary.exit_histogram[0] == len(test)


def test_evaluate_is_order_independent(desk):
    net, _, test, model, _ = desk
    policy = ClassMeansPolicy(model, tuple(np.random.default_rng(4).uniform(0.3, 1, net.depth)))
    perm = np.random.default_rng(5).permutation(len(test))
    a, b = evaluate(net, policy, test), evaluate(net, policy, test.subset(perm))
    assert (a.accuracy, a.mean_flops, a.exit_histogram) == (b.accuracy, b.mean_flops, b.exit_histogram)


def _check_table(net, test, policy, got):
    s = evaluate(net, policy, test)
    correct, flops, hist = got
    assert correct[0] == s.correct and flops[0] / len(test) == s.mean_flops
    assert hist[0].tolist() == s.exit_histogram


@pytest.mark.parametrize("overhead", [True, False])
def test_decision_table_agrees_with_per_sample_evaluation(desk, overhead):
    net, _, test, model, bundle = desk
    table = DecisionTable(net, test, model, bundle, overhead)
    rng = np.random.default_rng(8)
    P = len(bundle)
    for _ in range(5):
        T = rng.uniform(0.3, 1, net.depth)
        s = evaluate(net, ClassMeansPolicy(model, tuple(T)), test, overhead)
        c, f, h = table.class_means(T)
        assert (c[0], f[0] / len(test), h[0].tolist()) == (s.correct, s.mean_flops, s.exit_histogram)

        Ti, Tc = rng.uniform(0.3, 1, P), rng.uniform(0.3, 1, P)
        s = evaluate(net, CombinedPolicy(bundle, model, tuple(Ti), tuple(Tc)), test, overhead)
        c, f, h = table.combined(Ti, Tc)
        assert (c[0], f[0] / len(test), h[0].tolist()) == (s.correct, s.mean_flops, s.exit_histogram)

        for rule, hi in ((DecisionRule.MAX_PROB, 1.0), (DecisionRule.ENTROPY, math.log(4))):
            T = rng.uniform(0, hi, P)
            s = evaluate(net, InternalPolicy(bundle, rule, tuple(T)), test, overhead)
            c, f, h = table.internal(rule, T)
            assert (c[0], f[0] / len(test), h[0].tolist()) == (s.correct, s.mean_flops, s.exit_histogram)


def test_fallback_accuracy_equals_backbone(desk):
    net, _, test, model, bundle = desk
    backbone = (predict(net, test.X) == test.y).mean()
    P = len(bundle)
    for policy in (ClassMeansPolicy(model, (1.0,) * net.depth),
                   InternalPolicy(bundle, DecisionRule.MAX_PROB, (1.0,) * P),
                   CombinedPolicy(bundle, model, (1.0,) * P, (1.0,) * P)):
        assert evaluate(net, policy, test).accuracy == backbone
