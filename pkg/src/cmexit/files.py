"""JSON model and means files, plus the CSV writers used by the CLI.

Floats are written with 17 significant digits so a save/load round trip is
bit-exact. Model file::

    {"format_version": 1, "num_classes": K,
     "layers": [{"kind": "dense", "dims": [in, out], "weights": [...], "bias": [...]}, ...],
     "internal_classifiers": [{"attach_after_layer": j, "pool_factor": f,
                               "weights": [...], "bias": [...]}, ...]}

ReLU and avgpool layers carry empty ``weights``/``bias``; avgpool also stores
``factor``. A dense layer without bias has ``"bias": []``.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .class_means import ClassMeansModel
from .errors import ParseError, ValidationError
from .internal import ICBundle, InternalClassifier
from .nn import AvgPool, Dense, Network, ReLU

FORMAT_VERSION = 1


def _num(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".17g")


def _dumps(obj, level=0, compact=False) -> str:
    """JSON text with 17-digit floats; ``compact`` puts everything on one line."""
    nl, pad, end = ("", "", "") if compact else ("\n", "  " * (level + 1), "\n" + "  " * level)
    if isinstance(obj, dict):
        items = [f"{pad}{json.dumps(k)}: {_dumps(v, level + 1, compact)}" for k, v in obj.items()]
        return "{" + nl + ("," + (nl or " ")).join(items) + end + "}"
    if isinstance(obj, np.ndarray):
        obj = obj.tolist()
    if isinstance(obj, (list, tuple)):
        if not compact and any(isinstance(v, (dict, list, tuple, np.ndarray)) for v in obj):
            return "[" + nl + ",\n".join(pad + _dumps(v, level + 1) for v in obj) + end + "]"
        return "[" + ", ".join(_dumps(v, level + 1, compact) for v in obj) + "]"
    if isinstance(obj, str) or obj is None:
        return json.dumps(obj)
    return _num(obj)


def write_jsonl(path, records) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(_dumps(rec, compact=True) + "\n")


def write_json(obj, path) -> None:
    Path(path).write_text(_dumps(obj) + "\n", encoding="utf-8")


def read_json(path):
    text = Path(path).read_text(encoding="utf-8")
    try:
        return json.loads(text)
    except json.JSONDecodeError as e:
        raise ParseError(f"{path}: {e.msg}", e.lineno, e.colno) from None


def _require(doc, key, kind=None):
    if not isinstance(doc, dict) or key not in doc:
        raise ValidationError(f"missing field {key!r}")
    val = doc[key]
    if kind is not None and not isinstance(val, kind):
        raise ValidationError(f"field {key!r} has type {type(val).__name__}")
    return val


def _check_version(doc):
    if _require(doc, "format_version") != FORMAT_VERSION:
        raise ValidationError(f"unsupported format_version {doc['format_version']!r}")


def _layer_doc(layer) -> dict:
    if isinstance(layer, Dense):
        return {"kind": "dense", "dims": [layer.in_dim, layer.out_dim],
                "weights": layer.weight.ravel(), "bias": [] if layer.bias is None else layer.bias}
    doc = {"kind": layer.kind, "dims": [layer.in_dim, layer.out_dim], "weights": [], "bias": []}
    if isinstance(layer, AvgPool):
        doc["factor"] = layer.factor
    return doc


def _layer_from_doc(doc, index):
    kind = _require(doc, "kind", str)
    dims = _require(doc, "dims", list)
    if len(dims) != 2 or not all(isinstance(d, int) and d > 0 for d in dims):
        raise ValidationError(f"layer {index}: dims must be two positive integers")
    n_in, n_out = dims
    if kind == "dense":
        w = np.asarray(_require(doc, "weights", list), dtype=np.float64)
        b = np.asarray(_require(doc, "bias", list), dtype=np.float64)
        if w.size != n_in * n_out:
            raise ValidationError(f"layer {index}: {w.size} weights for dims {dims}")
        if b.size not in (0, n_out):
            raise ValidationError(f"layer {index}: {b.size} bias values for {n_out} outputs")
        return Dense(w.reshape(n_out, n_in), b if b.size else None)
    if kind == "relu":
        if n_in != n_out:
            raise ValidationError(f"layer {index}: relu dims must match")
        return ReLU(n_in)
    if kind == "avgpool":
        factor = doc.get("factor", n_in // n_out)
        if n_in != n_out * factor:
            raise ValidationError(f"layer {index}: avgpool dims {dims} inconsistent with factor {factor}")
        return AvgPool(n_in, factor)
    raise ValidationError(f"layer {index}: unknown kind {kind!r}")


def save_model(network: Network, path, bundle: ICBundle | None = None) -> None:
    doc = {"format_version": FORMAT_VERSION, "num_classes": network.num_classes,
           "layers": [_layer_doc(layer) for layer in network.layers]}
    if bundle is not None:
        doc["placement_fractions"] = list(bundle.placement_fractions)
        doc["internal_classifiers"] = [
            {"attach_after_layer": ic.attach_after_layer, "pool_factor": ic.pool_factor,
             "weights": ic.linear.weight.ravel(), "bias": ic.linear.bias}
            for ic in bundle.classifiers
        ]
    write_json(doc, path)


def load_model(path) -> tuple[Network, ICBundle | None]:
    doc = read_json(path)
    _check_version(doc)
    K = _require(doc, "num_classes", int)
    layers = [_layer_from_doc(d, i + 1) for i, d in enumerate(_require(doc, "layers", list))]
    try:
        network = Network(layers, K)
    except ValueError as e:
        raise ValidationError(str(e)) from None
    ics = doc.get("internal_classifiers")
    if ics is None:
        return network, None
    classifiers = []
    for i, d in enumerate(ics):
        j = _require(d, "attach_after_layer", int)
        f = _require(d, "pool_factor", int)
        if not 1 <= j <= network.depth:
            raise ValidationError(f"internal classifier {i + 1}: attach layer {j} out of range")
        width = network.layers[j - 1].out_dim
        w = np.asarray(_require(d, "weights", list), dtype=np.float64)
        b = np.asarray(_require(d, "bias", list), dtype=np.float64)
        if f < 1 or width % f or w.size != K * (width // f) or b.size != K:
            raise ValidationError(f"internal classifier {i + 1}: inconsistent shapes")
        head = Network([AvgPool(width, f), Dense(w.reshape(K, width // f), b)], K)
        classifiers.append(InternalClassifier(j, head))
    return network, ICBundle(classifiers, doc.get("placement_fractions", []))


def save_means(model: ClassMeansModel, path) -> None:
    write_json({"format_version": FORMAT_VERSION, "layer_count": model.layer_count,
                "class_count": model.class_count, "transform": model.transform,
                "means": [m for m in model.means], "normalizers": model.normalizers}, path)


def load_means(path) -> ClassMeansModel:
    doc = read_json(path)
    _check_version(doc)
    M = _require(doc, "layer_count", int)
    K = _require(doc, "class_count", int)
    raw = _require(doc, "means", list)
    if len(raw) != M:
        raise ValidationError(f"{len(raw)} mean layers, layer_count says {M}")
    means = []
    for j, layer in enumerate(raw):
        arr = np.asarray(layer, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[0] != K:
            raise ValidationError(f"means for layer {j + 1} must be {K} equal-length vectors")
        means.append(arr)
    norm = np.asarray(_require(doc, "normalizers", list), dtype=np.float64)
    try:
        return ClassMeansModel(means, norm, doc.get("transform", "reciprocal"))
    except ValueError as e:
        raise ValidationError(str(e)) from None


def eval_header(points: int) -> list[str]:
    return ["policy", "threshold_id", "accuracy", "mean_flops",
            *(f"exit_hist_{i}" for i in range(points)), "exit_hist_final"]


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_num(v) if isinstance(v, (float, np.floating)) else v for v in row])
