"""Command-line driver: ``cmexit <subcommand> [flags]``.

Stages hand off through files (datasets, model, means, thresholds, CSVs), and
all randomness is derived from ``--seed``.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import files
from .class_means import TRANSFORMS, fit_class_means, nearest_mean_confusion
from .data import generate_clusters, load_dataset, save_dataset, split
from .errors import InputError
from .exits import ClassMeansPolicy, CombinedPolicy, DecisionTable, InternalPolicy, evaluate
from .internal import DEFAULT_FRACTIONS, DecisionRule, build_bundle, train_ics
from .nn import TrainConfig, init_mlp, parameter_checksum, sgd_train
from .rng import derive_seed
from .search import (POLICIES, TradeoffPoint, evaluate_candidates, mixture_point,
                     sample_for_policy, time_sharing_accuracy, upper_frontier)

log = logging.getLogger("cmexit")

DEFAULT_HIDDEN = "32,32,32,32,32,32,32"


class UsageError(Exception):
    pass


def _floats(text):
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text):
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _existing(path):
    if path is None or not Path(path).is_file():
        raise UsageError(f"no such file: {path}")
    return path


def _train_config(args, seed):
    return TrainConfig(learning_rate=args.lr, momentum=args.momentum, epochs=args.epochs,
                       batch_size=args.batch_size, seed=seed)


def _add_train_flags(p, epochs):
    p.add_argument("--epochs", type=int, default=epochs)
    p.add_argument("--lr", type=float, default=TrainConfig.learning_rate)
    p.add_argument("--momentum", type=float, default=TrainConfig.momentum)
    p.add_argument("--batch-size", type=int, default=TrainConfig.batch_size)


# -- subcommands -------------------------------------------------------------

def cmd_gen_data(args):
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    ds = generate_clusters(args.classes, args.dim, args.per_class, args.separation, args.noise,
                           derive_seed(args.seed, "gen-data"))
    train, test = split(ds, args.test_fraction, derive_seed(args.seed, "split"))
    save_dataset(train, out / "train.txt")
    save_dataset(test, out / "test.txt")
    log.info("wrote %d train / %d test samples to %s", len(train), len(test), out)


def cmd_train(args):
    ds = load_dataset(_existing(args.data))
    net = init_mlp(ds.feature_dim, args.hidden, ds.num_classes, derive_seed(args.seed, "backbone"))
    cfg = _train_config(args, derive_seed(args.seed, "backbone-sgd"))
    history = sgd_train(net, ds, cfg)
    for epoch, loss in enumerate(history.epoch_losses, start=1):
        log.info("epoch %d loss %.6f", epoch, loss)
    out = args.out or "model.json"
    files.save_model(net, out)
    if args.loss_log:
        files.write_csv(args.loss_log, ["epoch", "loss"],
                        [(i + 1, v) for i, v in enumerate(history.epoch_losses)])
    log.info("saved model (%d layers, %d FLOPs) to %s", net.depth, net.total_flops, out)


def cmd_means(args):
    net, _ = files.load_model(_existing(args.model))
    ds = load_dataset(_existing(args.data))
    model = fit_class_means(net, ds, args.transform)
    for msg in model.warnings:
        log.warning(msg)
    files.save_means(model, args.out or "means.json")


def cmd_ic_train(args):
    net, _ = files.load_model(_existing(args.model))
    ds = load_dataset(_existing(args.data))
    before = parameter_checksum(net)
    bundle = build_bundle(net, args.fractions, derive_seed(args.seed, "ic"))
    logs = train_ics(net, bundle, ds, _train_config(args, derive_seed(args.seed, "ic-sgd")))
    assert parameter_checksum(net) == before, "backbone changed during IC training"
    for ic, hist in zip(bundle.classifiers, logs):
        final = hist.epoch_losses[-1] if hist.epoch_losses else float("nan")
        log.info("IC after layer %d (pool %d): final loss %.6f", ic.attach_after_layer, ic.pool_factor, final)
    files.save_model(net, args.out or "model_ic.json", bundle)


def _load_stack(args, policy):
    net, bundle = files.load_model(_existing(args.model))
    means = None
    if policy in ("class-means", "combined"):
        if not args.means:
            raise UsageError(f"--means is required for policy {policy}")
        means = files.load_means(_existing(args.means))
        if means.layer_count != net.depth or means.widths() != net.output_dims:
            raise InputError("means file does not match the model's layers")
    if policy != "class-means" and bundle is None:
        raise UsageError(f"policy {policy} needs a model with internal classifiers (run ic-train)")
    if policy == "class-means":
        bundle = None
    return net, bundle, means


def _points_rows(points):
    return [(p.threshold_id, p.mean_flops, p.accuracy) for p in points]


def cmd_search(args):
    net, bundle, means = _load_stack(args, args.policy)
    train = load_dataset(_existing(args.train))
    table = DecisionTable(net, train, means, bundle, not args.no_overhead)
    cands = sample_for_policy(args.policy, args.count, table, derive_seed(args.seed, "search"))
    points = evaluate_candidates(table, args.policy, cands, args.threads)
    frontier = upper_frontier(points)

    out = Path(args.out or "search")
    out.mkdir(parents=True, exist_ok=True)
    files.write_csv(out / "frontier.csv", ["threshold_id", "mean_flops", "accuracy"], _points_rows(frontier))
    files.write_jsonl(out / "frontier_thresholds.jsonl",
                      [{"threshold_id": p.threshold_id, "policy": args.policy,
                        "thresholds": cands[p.threshold_id].tolist()} for p in frontier])
    log.info("%d candidates -> %d frontier points (train)", len(points), len(frontier))

    test_points = None
    if args.test:
        test = load_dataset(_existing(args.test))
        test_table = DecisionTable(net, test, means, bundle, not args.no_overhead)
        ids = [p.threshold_id for p in frontier]
        evald = evaluate_candidates(test_table, args.policy, cands[ids], args.threads)
        test_points = {i: TradeoffPoint(p.mean_flops, p.accuracy, i) for i, p in zip(ids, evald)}
        files.write_csv(out / "frontier_test.csv", ["threshold_id", "mean_flops", "accuracy"],
                        _points_rows(test_points[i] for i in ids))

    if args.budgets:
        rows = []
        for b in args.budgets:
            acc, mix = time_sharing_accuracy(frontier, b)
            row = [b, acc, mix.first, mix.second, mix.weight]
            if test_points is not None:
                row += list(mixture_point(mix, test_points))
            rows.append(row)
        header = ["budget", "train_accuracy", "first_id", "second_id", "weight"]
        if test_points is not None:
            header += ["test_mean_flops", "test_accuracy"]
        files.write_csv(out / "curve.csv", header, rows)


def _read_thresholds(path, policy, threshold_id):
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise InputError(f"{path}:{lineno}: {e.msg}") from None
            if rec.get("policy", policy) != policy:
                raise InputError(f"{path}:{lineno}: thresholds are for policy {rec['policy']}, not {policy}")
            rows.append((int(rec["threshold_id"]), [float(t) for t in rec["thresholds"]]))
    if threshold_id is not None:
        rows = [r for r in rows if r[0] == threshold_id]
        if not rows:
            raise InputError(f"threshold_id {threshold_id} not found in {path}")
    if not rows:
        raise InputError(f"{path} holds no thresholds")
    return rows


def _threshold_count(policy, net, bundle):
    if policy == "class-means":
        return net.depth
    return len(bundle) * (2 if policy == "combined" else 1)


def _policy(policy, bundle, means, thresholds):
    if policy == "class-means":
        return ClassMeansPolicy(means, tuple(thresholds))
    if policy == "combined":
        P = len(bundle)
        if len(thresholds) != 2 * P:
            raise InputError(f"combined: expected {2 * P} thresholds (IC then class means), got {len(thresholds)}")
        return CombinedPolicy(bundle, means, tuple(thresholds[:P]), tuple(thresholds[P:]))
    rule = DecisionRule.MAX_PROB if policy == "internal-maxprob" else DecisionRule.ENTROPY
    return InternalPolicy(bundle, rule, tuple(thresholds))


def cmd_eval(args):
    net, bundle, means = _load_stack(args, args.policy)
    ds = load_dataset(_existing(args.data))
    if args.thresholds:
        rows = _read_thresholds(_existing(args.thresholds), args.policy, args.threshold_id)
    elif args.uniform is not None:
        rows = [(0, [args.uniform] * _threshold_count(args.policy, net, bundle))]
    else:
        raise UsageError("give --thresholds FILE or --uniform T")

    points = None
    result_rows = []
    traces = [] if args.trace else None
    for tid, thr in rows:
        summary = evaluate(net, _policy(args.policy, bundle, means, thr), ds,
                           not args.no_overhead, traces)
        points = len(summary.exit_histogram) - 1
        result_rows.append([args.policy, tid, summary.accuracy, summary.mean_flops, *summary.exit_histogram])
        log.info("threshold %d: accuracy %.4f, mean FLOPs %.1f", tid, summary.accuracy, summary.mean_flops)
    files.write_csv(args.out or "eval.csv", files.eval_header(points), result_rows)
    if traces is not None:
        n = len(ds)
        files.write_jsonl(args.trace, [
            {"threshold_id": rows[i // n][0], "sample": i % n, "label": int(ds.y[i % n]),
             "prediction": r.prediction, "exit_layer": "final" if r.exit_layer is None else r.exit_layer,
             "flops_used": r.flops_used,
             "trace": [[s.layer, s.gate, s.confidence, s.threshold, s.exited] for s in r.trace]}
            for i, r in enumerate(traces)])


def cmd_confusion(args):
    net, _ = files.load_model(_existing(args.model))
    means = files.load_means(_existing(args.means))
    ds = load_dataset(_existing(args.data))
    layers = [args.layer] if args.layer is not None else range(1, net.depth + 1)
    out = Path(args.out or "confusion")
    out.mkdir(parents=True, exist_ok=True)
    K = net.num_classes
    for j in layers:
        mat = nearest_mean_confusion(net, ds, means.means, j)
        files.write_csv(out / f"confusion_layer_{j:02d}.csv", ["true", *(f"pred_{k}" for k in range(1, K + 1))],
                        [[k + 1, *row] for k, row in enumerate(mat.tolist())])
        log.info("layer %d: diagonal mass %.4f", j, np.trace(mat) / mat.sum())


# -- parser ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="root seed for every random stream")
    common.add_argument("--out", help="output file or directory (per subcommand)")
    common.add_argument("--threads", type=int, default=1, help="worker cap for candidate evaluation")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="cmexit", description="Class-means early-exit toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", parents=[common], help="generate a synthetic train/test pair")
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--dim", type=int, default=16)
    p.add_argument("--per-class", type=int, default=200)
    p.add_argument("--separation", type=float, default=10.0)
    p.add_argument("--noise", type=float, default=1.0)
    p.add_argument("--test-fraction", type=float, default=0.5)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", parents=[common], help="train the backbone MLP")
    p.add_argument("--data", required=True)
    p.add_argument("--hidden", type=_ints, default=_ints(DEFAULT_HIDDEN))
    p.add_argument("--loss-log", help="optional CSV of per-epoch losses")
    _add_train_flags(p, epochs=20)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("means", parents=[common], help="extract class means and normalizers")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--transform", choices=TRANSFORMS, default="reciprocal")
    p.set_defaults(func=cmd_means)

    p = sub.add_parser("ic-train", parents=[common], help="place and train internal classifiers")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--fractions", type=_floats, default=list(DEFAULT_FRACTIONS))
    _add_train_flags(p, epochs=20)
    p.set_defaults(func=cmd_ic_train)

    p = sub.add_parser("search", parents=[common], help="random threshold search and frontier")
    p.add_argument("--model", required=True)
    p.add_argument("--means")
    p.add_argument("--train", required=True, help="dataset used to select thresholds")
    p.add_argument("--test", help="dataset the selected thresholds are evaluated on")
    p.add_argument("--policy", choices=POLICIES, default="class-means")
    p.add_argument("--count", type=int, default=10000)
    p.add_argument("--budgets", type=_floats, help="mean-FLOPs budgets to read off the curve")
    p.add_argument("--no-overhead", action="store_true", help="count backbone FLOPs only")
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("eval", parents=[common], help="evaluate fixed thresholds")
    p.add_argument("--model", required=True)
    p.add_argument("--means")
    p.add_argument("--data", required=True)
    p.add_argument("--policy", choices=POLICIES, default="class-means")
    p.add_argument("--thresholds", help="JSONL file as written by search")
    p.add_argument("--threshold-id", type=int)
    p.add_argument("--uniform", type=float, help="use this threshold at every decision point")
    p.add_argument("--trace", help="write per-sample traces (JSONL) here")
    p.add_argument("--no-overhead", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("confusion", parents=[common], help="nearest-class-mean confusion matrices")
    p.add_argument("--model", required=True)
    p.add_argument("--means", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--layer", type=int, help="single 1-based layer (default: all)")
    p.set_defaults(func=cmd_confusion)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    if args.threads < 1:
        parser.error("--threads must be >= 1")
    try:
        args.func(args)
    except UsageError as e:
        print(f"cmexit {args.command}: usage error: {e}", file=sys.stderr)
        return 2
    except (ValueError, OSError, KeyError, FloatingPointError) as e:
        msg = str(e).splitlines()[0] if str(e) else type(e).__name__
        print(f"cmexit {args.command}: error: {msg}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
