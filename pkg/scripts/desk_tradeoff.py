"""Accuracy-vs-FLOPs curves of every exit policy on the desk-scale cluster task.

Thresholds are searched on the training split; the chosen mixtures are then
measured on the test split. Output is CSV on stdout:
policy,budget,budget_fraction,train_accuracy,test_mean_flops,test_accuracy
"""

import argparse
import csv
import sys

import numpy as np

from cmexit.class_means import fit_class_means
from cmexit.exits import DecisionTable
from cmexit.experiments import DeskConfig, desk_data, search_curve, train_backbone
from cmexit.internal import build_bundle, train_ics
from cmexit.nn import TrainConfig
from cmexit.rng import derive_seed
from cmexit.search import POLICIES, mixture_point, time_sharing_accuracy


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--epochs", type=int, default=20, help="backbone and IC epochs")
    ap.add_argument("--count", type=int, default=10000)
    ap.add_argument("--separation", type=float, default=10.0)
    ap.add_argument("--noise", type=float, default=1.0)
    ap.add_argument("--budgets", type=int, default=10, help="budgets per curve")
    args = ap.parse_args()

    cfg = DeskConfig(separation=args.separation, noise_sigma=args.noise, count=args.count)
    train, test = desk_data(cfg, args.seed)
    net = train_backbone(cfg, train, args.seed, args.epochs)
    means = fit_class_means(net, train)
    bundle = build_bundle(net, seed=derive_seed(args.seed, "ic"))
    train_ics(net, bundle, train, TrainConfig(epochs=args.epochs, seed=derive_seed(args.seed, "ic-sgd")))
    tables = [DecisionTable(net, d, means, bundle) for d in (train, test)]

    out = csv.writer(sys.stdout, lineterminator="\n")
    out.writerow(["policy", "budget", "budget_fraction", "train_accuracy", "test_mean_flops", "test_accuracy"])
    for policy in POLICIES:
        curve = search_curve(policy, *tables, cfg.count, args.seed)
        lo, hi = curve.frontier[0].mean_flops, curve.frontier[-1].mean_flops
        for b in np.linspace(lo, hi, args.budgets):
            acc, mix = time_sharing_accuracy(curve.frontier, float(b))
            flops, test_acc = mixture_point(mix, curve.test_points)
            out.writerow([policy, f"{b:.1f}", f"{b / net.total_flops:.4f}", f"{acc:.4f}",
                          f"{flops:.1f}", f"{test_acc:.4f}"])


if __name__ == "__main__":
    main()
