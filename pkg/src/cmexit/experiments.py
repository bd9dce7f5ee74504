"""Desk-scale experiment helpers shared by scripts/ and the acceptance tests."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .class_means import fit_class_means
from .data import Dataset, generate_clusters, split
from .exits import DecisionTable
from .internal import DEFAULT_FRACTIONS, build_bundle, train_ics
from .nn import Network, TrainConfig, init_mlp, sgd_train
from .rng import derive_seed
from .search import (TradeoffPoint, evaluate_candidates, mixture_point, sample_for_policy,
                     time_sharing_accuracy, upper_frontier)

DEFAULT_HIDDEN = (32,) * 7


@dataclass
class DeskConfig:
    num_classes: int = 4
    dim: int = 16
    per_class: int = 200
    separation: float = 10.0
    noise_sigma: float = 1.0
    test_fraction: float = 0.5
    hidden: tuple[int, ...] = DEFAULT_HIDDEN
    backbone_epochs: int = 20
    ic_epochs: int = 20
    count: int = 10000


def desk_data(cfg: DeskConfig, seed: int) -> tuple[Dataset, Dataset]:
    ds = generate_clusters(cfg.num_classes, cfg.dim, cfg.per_class, cfg.separation, cfg.noise_sigma,
                           derive_seed(seed, "gen-data"))
    return split(ds, cfg.test_fraction, derive_seed(seed, "split"))


def train_backbone(cfg: DeskConfig, train: Dataset, seed: int, epochs: int | None = None) -> Network:
    net = init_mlp(train.feature_dim, cfg.hidden, train.num_classes, derive_seed(seed, "backbone"))
    sgd_train(net, train, TrainConfig(epochs=cfg.backbone_epochs if epochs is None else epochs,
                                      seed=derive_seed(seed, "backbone-sgd")))
    return net


@dataclass
class Curve:
    """A frontier chosen on the training set plus its points re-measured on test."""

    frontier: list[TradeoffPoint]
    test_points: dict[int, TradeoffPoint]

    def test_accuracy_at(self, budget: float) -> float | None:
        """Test accuracy of the time-sharing mixture for ``budget``.

        Budgets above the frontier use its last point (spending less is always
        allowed); budgets below it are unreachable and give ``None``.
        """
        lo, hi = self.frontier[0].mean_flops, self.frontier[-1].mean_flops
        if budget < lo:
            return None
        _, mix = time_sharing_accuracy(self.frontier, min(budget, hi))
        return mixture_point(mix, self.test_points)[1]


def search_curve(policy: str, train_table: DecisionTable, test_table: DecisionTable, count: int,
                 seed: int) -> Curve:
    cands = sample_for_policy(policy, count, train_table, derive_seed(seed, "search"))
    frontier = upper_frontier(evaluate_candidates(train_table, policy, cands))
    ids = [p.threshold_id for p in frontier]
    measured = evaluate_candidates(test_table, policy, cands[ids])
    return Curve(frontier, {i: TradeoffPoint(p.mean_flops, p.accuracy, i) for i, p in zip(ids, measured)})


@dataclass
class BudgetComparison:
    seed: int
    budgets: list[float]
    class_means: list[float]
    internal: list[float]

    @property
    def class_means_wins(self) -> bool:
        return all(c >= i for c, i in zip(self.class_means, self.internal))


def fixed_budget_comparison(seed: int, cfg: DeskConfig | None = None, epochs: int = 1,
                            n_budgets: int = 5) -> BudgetComparison:
    """Class means vs max-prob ICs when backbone and ICs each get ``epochs`` of training.

    Both curves are compared on test accuracy at ``n_budgets`` budgets spread
    from the first budget both policies can meet up to the full-network cost.
    """
    cfg = cfg or DeskConfig()
    train, test = desk_data(cfg, seed)
    net = train_backbone(cfg, train, seed, epochs)
    means = fit_class_means(net, train)
    bundle = build_bundle(net, DEFAULT_FRACTIONS, derive_seed(seed, "ic"))
    train_ics(net, bundle, train, TrainConfig(epochs=epochs, seed=derive_seed(seed, "ic-sgd")))

    tables = [DecisionTable(net, d, means, bundle) for d in (train, test)]
    cm = search_curve("class-means", *tables, cfg.count, seed)
    ic = search_curve("internal-maxprob", *tables, cfg.count, seed)
    lo = max(cm.frontier[0].mean_flops, ic.frontier[0].mean_flops)
    budgets = [float(b) for b in np.linspace(lo, max(lo, net.total_flops), n_budgets)]
    return BudgetComparison(seed, budgets, [cm.test_accuracy_at(b) for b in budgets],
                            [ic.test_accuracy_at(b) for b in budgets])
