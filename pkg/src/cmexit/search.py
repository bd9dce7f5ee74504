"""Random threshold search and the FLOPs-accuracy frontier.

Candidates are random threshold vectors. Each becomes one (mean FLOPs, accuracy)
point; the frontier is the rising part of the upper convex hull of that cloud,
and budgets between two frontier points are reached by time sharing, i.e.
running one configuration on a fraction ``w`` of inputs and the other on the rest.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import BudgetRangeError, InputError
from .exits import DecisionTable
from .internal import DecisionRule
from .rng import Xoshiro256, derive_seed

POLICIES = ("class-means", "internal-maxprob", "internal-entropy", "combined")


@dataclass(frozen=True)
class TradeoffPoint:
    mean_flops: float
    accuracy: float
    threshold_id: int


def sample_threshold_vectors(count: int, length: int, low: float = 0.0, high: float = 1.0,
                             seed: int = 0) -> np.ndarray:
    """(count, length) array, entries uniform on [low, high).

    Row i uses its own stream ``derive_seed(seed, "thresholds", i)``, so any
    row can be regenerated without the others.
    """
    if count < 1 or length < 1:
        raise InputError("count and length must be positive")
    if not (math.isfinite(low) and math.isfinite(high) and low < high):
        raise InputError(f"invalid sampling range [{low}, {high})")
    out = np.empty((count, length))
    for i in range(count):
        out[i] = Xoshiro256(derive_seed(seed, "thresholds", i)).uniform(low, high, length)
    return out


def candidate_length(policy: str, table: DecisionTable) -> int:
    if policy == "class-means":
        return table.network.depth
    if policy == "combined":
        return 2 * len(table.bundle)
    return len(table.bundle)


def sample_for_policy(policy: str, count: int, table: DecisionTable, seed: int) -> np.ndarray:
    """Candidates in the policy's threshold range; entropy uses [0, ln K)."""
    high = math.log(table.network.num_classes) if policy == "internal-entropy" else 1.0
    return sample_threshold_vectors(count, candidate_length(policy, table), 0.0, high, seed)


def _evaluate_chunk(policy, table, chunk):
    if policy == "class-means":
        return table.class_means(chunk)
    if policy == "combined":
        P = len(table.bundle)
        return table.combined(chunk[:, :P], chunk[:, P:])
    rule = DecisionRule.MAX_PROB if policy == "internal-maxprob" else DecisionRule.ENTROPY
    return table.internal(rule, chunk)


def evaluate_candidates(table: DecisionTable, policy: str, candidates, threads: int = 1,
                        chunk_size: int = 256) -> list[TradeoffPoint]:
    """One point per candidate row, in input order.

    For ``combined`` each row is the IC thresholds followed by the class-means
    thresholds. Work is split into fixed chunks, so the result does not depend
    on ``threads``.
    """
    if policy not in POLICIES:
        raise InputError(f"unknown policy {policy!r}; expected one of {POLICIES}")
    C = np.atleast_2d(np.asarray(candidates, dtype=np.float64))
    if len(C) == 0:
        raise InputError("no candidates to evaluate")
    expected = candidate_length(policy, table)
    if C.shape[1] != expected:
        raise InputError(f"{policy}: expected {expected} thresholds per candidate, got {C.shape[1]}")
    chunks = [C[i:i + chunk_size] for i in range(0, len(C), chunk_size)]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(lambda c: _evaluate_chunk(policy, table, c), chunks))
    else:
        results = [_evaluate_chunk(policy, table, c) for c in chunks]
    correct = np.concatenate([r[0] for r in results])
    flops = np.concatenate([r[1] for r in results])
    return [TradeoffPoint(int(f) / table.n, int(c) / table.n, i)
            for i, (c, f) in enumerate(zip(correct, flops))]


def _cross(o, a, b):
    return (a.mean_flops - o.mean_flops) * (b.accuracy - o.accuracy) - \
        (a.accuracy - o.accuracy) * (b.mean_flops - o.mean_flops)


def _dedupe(points):
    """Best point per FLOPs value; exact ties go to the lowest threshold_id."""
    best = {}
    for p in points:
        cur = best.get(p.mean_flops)
        if cur is None or (p.accuracy, -p.threshold_id) > (cur.accuracy, -cur.threshold_id):
            best[p.mean_flops] = p
    return [best[f] for f in sorted(best)]


def upper_frontier(points) -> list[TradeoffPoint]:
    """Upper convex hull (monotone chain, collinear points dropped), cut at the
    first point of maximum accuracy so both coordinates strictly increase."""
    points = list(points)
    if not points:
        raise InputError("need at least one point")
    hull: list[TradeoffPoint] = []
    for p in _dedupe(points):
        while len(hull) >= 2 and _cross(hull[-2], hull[-1], p) >= 0:
            hull.pop()
        hull.append(p)
    peak = max(range(len(hull)), key=lambda i: (hull[i].accuracy, -i))
    return hull[:peak + 1]


@dataclass(frozen=True)
class Mixture:
    first: int  # threshold_id used with probability `weight`
    second: int
    weight: float


def time_sharing_accuracy(frontier, budget: float) -> tuple[float, Mixture]:
    """Accuracy reachable at mean FLOPs ``budget`` by mixing two adjacent frontier points."""
    lo, hi = frontier[0].mean_flops, frontier[-1].mean_flops
    if not lo <= budget <= hi:
        raise BudgetRangeError(budget, lo, hi)
    for p in frontier:
        if p.mean_flops == budget:
            return p.accuracy, Mixture(p.threshold_id, p.threshold_id, 1.0)
    k = next(i for i in range(1, len(frontier)) if frontier[i].mean_flops > budget)
    a, b = frontier[k - 1], frontier[k]
    w = (b.mean_flops - budget) / (b.mean_flops - a.mean_flops)
    return w * a.accuracy + (1 - w) * b.accuracy, Mixture(a.threshold_id, b.threshold_id, w)


def mixture_point(mixture: Mixture, points_by_id: dict) -> tuple[float, float]:
    """(mean FLOPs, accuracy) of a mixture evaluated on other data, e.g. the test set."""
    a, b = points_by_id[mixture.first], points_by_id[mixture.second]
    w = mixture.weight
    return (w * a.mean_flops + (1 - w) * b.mean_flops, w * a.accuracy + (1 - w) * b.accuracy)
