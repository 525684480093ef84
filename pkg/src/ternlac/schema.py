"""YAML files: networks with weight references, train/sim configs, checkpoints, datasets.

Every document starts with ``schema: 1``. Validation failures raise
:class:`SchemaError` carrying the offending field path.
"""

from __future__ import annotations

import dataclasses
import os
from pathlib import Path
from typing import Any, Mapping

import numpy as np
import yaml

from .data import Dataset
from .errors import DomainError, FormatError, SchemaError, ShapeError
from .graph import LAYER_TYPES, NetworkSpec
from .quantize import DEFAULT_RELU_TAU, ThresholdPolicy
from .sim import PRESETS, SimConfig
from .tensor import Tensor, TernaryTensor
from .tensorio import atomic_write, load_any, save_any
from .train import TrainConfig, TrainResult

SCHEMA_VERSION = 1

# field -> (kind, default); kind is "pos", "nonneg", "num", "list" or "precision"
_LAYER_FIELDS = {
    "Conv2d": {"in_ch": ("pos", None), "out_ch": ("pos", None), "kh": ("pos", None),
               "kw": ("pos", None), "stride": ("pos", 1), "pad": ("nonneg", 0),
               "precision": ("precision", "full")},
    "FullyConnected": {"in_dim": ("pos", None), "out_dim": ("pos", None),
                       "precision": ("precision", "full")},
    "ReLUT": {"tau": ("num", DEFAULT_RELU_TAU)},
    "BatchNormInf": {"scale": ("list", None), "shift": ("list", None)},
    "SoftmaxXent": {"classes": ("pos", None)},
}


def _is_int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def _is_num(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def read_yaml(path) -> dict:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except UnicodeDecodeError as e:
        raise FormatError(f"{path}: not UTF-8 text ({e})") from None
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise SchemaError("", f"{path}: malformed YAML: {e}") from None
    if not isinstance(doc, dict):
        raise SchemaError("", f"{path}: top level must be a mapping")
    return doc


def _write_yaml(path, doc: dict):
    atomic_write(path, yaml.safe_dump(doc, sort_keys=False, default_flow_style=None))


def check_schema(doc: Mapping, where: str = ""):
    if "schema" not in doc:
        raise SchemaError("schema", f"{where}missing mandatory 'schema: {SCHEMA_VERSION}' header")
    if doc["schema"] != SCHEMA_VERSION:
        raise SchemaError("schema", f"{where}unsupported schema version {doc['schema']!r}")


# --- networks --------------------------------------------------------------------


def _layer_from_dict(d, path: str):
    if not isinstance(d, dict):
        raise SchemaError(path, "layer entry must be a mapping")
    kind = d.get("type")
    if kind not in LAYER_TYPES:
        raise SchemaError(f"{path}.type", f"unknown layer type {kind!r}; expected one of {sorted(LAYER_TYPES)}")
    fields = _LAYER_FIELDS[kind]
    allowed = set(fields) | {"type"} | ({"weights"} if LAYER_TYPES[kind].parameterized else set())
    for key in d:
        if key not in allowed:
            raise SchemaError(f"{path}.{key}", f"unknown field for {kind}")
    kwargs = {}
    for name, (check, default) in fields.items():
        fpath = f"{path}.{name}"
        if name not in d:
            if default is None:
                raise SchemaError(fpath, "required field missing")
            kwargs[name] = default
            continue
        v = d[name]
        if check == "pos" and not (_is_int(v) and v > 0):
            raise SchemaError(fpath, f"must be a positive integer, got {v!r}")
        if check == "nonneg" and not (_is_int(v) and v >= 0):
            raise SchemaError(fpath, f"must be a non-negative integer, got {v!r}")
        if check == "num" and not (_is_num(v) and v >= 0):
            raise SchemaError(fpath, f"must be a non-negative number, got {v!r}")
        if check == "precision" and v not in ("full", "ternary"):
            raise SchemaError(fpath, f"must be 'full' or 'ternary', got {v!r}")
        if check == "list" and not (isinstance(v, list) and v and all(_is_num(x) for x in v)):
            raise SchemaError(fpath, "must be a non-empty list of numbers")
        kwargs[name] = v
    if kind == "BatchNormInf" and len(kwargs["scale"]) != len(kwargs["shift"]):
        raise SchemaError(f"{path}.shift", "length differs from scale")
    try:
        return LAYER_TYPES[kind](**kwargs)
    except DomainError as e:
        raise SchemaError(path, str(e)) from None


def _layer_to_dict(layer) -> dict:
    d = {"type": layer.type}
    for f in dataclasses.fields(layer):
        v = getattr(layer, f.name)
        d[f.name] = list(v) if isinstance(v, tuple) else v
    return d


def network_from_dict(doc: Mapping) -> tuple[NetworkSpec, dict[int, str]]:
    """Validate a parsed network document; returns the spec and weight references."""
    check_schema(doc)
    for key in doc:
        if key not in ("schema", "name", "input_shape", "layers"):
            raise SchemaError(key, "unknown top-level field")
    name = doc.get("name")
    if not isinstance(name, str) or not name:
        raise SchemaError("name", "must be a non-empty string")
    shape = doc.get("input_shape")
    if not (isinstance(shape, list) and shape and all(_is_int(v) and v > 0 for v in shape)):
        raise SchemaError("input_shape", f"must be a non-empty list of positive integers, got {shape!r}")
    layers_doc = doc.get("layers")
    if not isinstance(layers_doc, list) or not layers_doc:
        raise SchemaError("layers", "must be a non-empty list")
    layers, refs = [], {}
    for i, d in enumerate(layers_doc):
        layers.append(_layer_from_dict(d, f"layers[{i}]"))
        if "weights" in d:
            if not isinstance(d["weights"], str) or not d["weights"]:
                raise SchemaError(f"layers[{i}].weights", "must be a relative file path")
            refs[i] = d["weights"]
    try:
        net = NetworkSpec(name, layers, shape)
    except (ShapeError, DomainError) as e:
        raise SchemaError("layers", str(e)) from None
    return net, refs


def network_to_dict(net: NetworkSpec, refs: Mapping[int, str] | None = None) -> dict:
    layers = []
    for i, layer in enumerate(net.layers):
        d = _layer_to_dict(layer)
        if refs and i in refs:
            d["weights"] = refs[i]
        layers.append(d)
    return {"schema": SCHEMA_VERSION, "name": net.name, "input_shape": list(net.input_shape),
            "layers": layers}


def weight_filename(i: int, w) -> str:
    return f"layer{i}.tern" if isinstance(w, TernaryTensor) else f"layer{i}.tnsr"


def save_network(path, net: NetworkSpec, weights: Mapping[int, Tensor | TernaryTensor] | None = None):
    """Write the schema file and, if given, one weight file per parameterized layer.

    Weight files go next to the schema file and are referenced relative to it.
    """
    path = Path(path)
    refs = {}
    for i, w in (weights or {}).items():
        refs[i] = weight_filename(i, w)
        save_any(path.parent / refs[i], w)
    _write_yaml(path, network_to_dict(net, refs))


def load_network(path, load_weights: bool = True) -> tuple[NetworkSpec, dict]:
    """Read a network schema; with ``load_weights`` also read every referenced file."""
    path = Path(path)
    net, refs = network_from_dict(read_yaml(path))
    weights = {}
    if load_weights:
        for i, ref in refs.items():
            layer = net.layers[i]
            fpath = path.parent / ref
            if not fpath.exists():
                raise SchemaError(f"layers[{i}].weights",
                                  f"layer {i} ({layer.type}): weight file {ref!r} not found")
            w = load_any(fpath)
            want = TernaryTensor if layer.precision == "ternary" else Tensor
            if not isinstance(w, want):
                raise SchemaError(f"layers[{i}].weights",
                                  f"layer {i} ({layer.type}) is {layer.precision} but {ref!r} holds a {type(w).__name__}")
            if tuple(w.shape) != layer.weight_shape:
                raise SchemaError(f"layers[{i}].weights",
                                  f"layer {i} ({layer.type}): {ref!r} has shape {list(w.shape)}, "
                                  f"expected {list(layer.weight_shape)}")
            weights[i] = w
    return net, weights


# --- configs ---------------------------------------------------------------------

TRAIN_ALIASES = {
    "epochs": "epochs_total",
    "epochs_fp": "epochs_full_precision",
    "lr": "lr0",
    "lambda": "lambda_l1",
    "tau": "relu_tau",
    "filter": "grad_update_filter",
    "threshold": "threshold_policy.value",
    "threshold_kind": "threshold_policy.kind",
}


def canonical_key(key: str, aliases: Mapping[str, str] | None = None) -> str:
    key = key.strip().replace("-", "_")
    return (aliases or {}).get(key, key)


def _flatten(d: Mapping, prefix: str = "") -> dict:
    out = {}
    for k, v in d.items():
        if isinstance(v, dict):
            out.update(_flatten(v, f"{prefix}{k}."))
        else:
            out[f"{prefix}{k}"] = v
    return out


def train_config_keys() -> list[str]:
    keys = [f.name for f in dataclasses.fields(TrainConfig) if f.name != "threshold_policy"]
    return keys + ["threshold_policy.kind", "threshold_policy.value"]


def train_config_from_flat(flat: Mapping[str, Any], base: TrainConfig | None = None) -> TrainConfig:
    """Apply dotted ``key -> value`` pairs on top of ``base``.

    Raises SchemaError naming the key for unknown keys or wrongly-typed
    values; range violations surface as DomainError from TrainConfig.
    """
    base = base or TrainConfig()
    known = set(train_config_keys())
    fields = {f.name: f for f in dataclasses.fields(TrainConfig)}
    changes, policy = {}, {"kind": base.threshold_policy.kind, "value": base.threshold_policy.value}
    for key, v in flat.items():
        if key not in known:
            raise SchemaError(key, "unknown training option")
        if key.startswith("threshold_policy."):
            sub = key.split(".", 1)[1]
            if sub == "value" and not _is_num(v):
                raise SchemaError(key, f"must be a number, got {v!r}")
            policy[sub] = v
            continue
        if key == "epochs_full_precision" and v == "all":
            changes["_fp_all"] = True
            continue
        ftype = fields[key].type
        if key == "grad_update_filter":
            if not isinstance(v, bool):
                raise SchemaError(key, f"must be true or false, got {v!r}")
        elif key == "relu_tau":
            if v is not None and not _is_num(v):
                raise SchemaError(key, f"must be a number or null, got {v!r}")
        elif ftype in ("int", int):
            if not _is_int(v):
                raise SchemaError(key, f"must be an integer, got {v!r}")
        elif not _is_num(v):
            raise SchemaError(key, f"must be a number, got {v!r}")
        changes[key] = float(v) if ftype in ("float", float) and v is not None else v
    fp_all = changes.pop("_fp_all", False)
    changes["threshold_policy"] = ThresholdPolicy(policy["kind"], float(policy["value"]))
    if fp_all:
        changes["epochs_full_precision"] = changes.get("epochs_total", base.epochs_total)
    return base.replace(**changes)


def train_config_to_dict(cfg: TrainConfig) -> dict:
    d = {"schema": SCHEMA_VERSION}
    for f in dataclasses.fields(cfg):
        v = getattr(cfg, f.name)
        if isinstance(v, ThresholdPolicy):
            v = {"kind": v.kind, "value": v.value}
        d[f.name] = v
    return d


def read_train_config_flat(path) -> dict:
    """Flattened keys of a train config file, unvalidated so flags can be merged first."""
    doc = read_yaml(path)
    check_schema(doc)
    return _flatten({k: v for k, v in doc.items() if k != "schema"})


def load_train_config(path) -> TrainConfig:
    return train_config_from_flat(read_train_config_flat(path))


def save_train_config(path, cfg: TrainConfig):
    _write_yaml(path, train_config_to_dict(cfg))


def sim_config_keys() -> list[str]:
    return ["preset"] + [f.name for f in dataclasses.fields(SimConfig)]


def sim_config_from_flat(flat: Mapping[str, Any], base: SimConfig | None = None) -> SimConfig:
    """Like :func:`train_config_from_flat`; a ``preset`` key resets the base first."""
    flat = dict(flat)
    if "preset" in flat:
        name = flat.pop("preset")
        if name not in PRESETS:
            raise SchemaError("preset", f"unknown preset {name!r}; expected one of {sorted(PRESETS)}")
        base = PRESETS[name]
    base = base or PRESETS["dlac-train"]
    fields = {f.name: f for f in dataclasses.fields(SimConfig)}
    changes = {}
    for key, v in flat.items():
        if key not in fields:
            raise SchemaError(key, "unknown simulator option")
        ftype = fields[key].type
        if key == "mode":
            if not isinstance(v, str):
                raise SchemaError(key, f"must be a string, got {v!r}")
        elif ftype in ("int", int):
            if not _is_int(v):
                raise SchemaError(key, f"must be an integer, got {v!r}")
        elif not _is_num(v):
            raise SchemaError(key, f"must be a number, got {v!r}")
        changes[key] = float(v) if ftype in ("float", float) else v
    return base.replace(**changes)


def sim_config_to_dict(cfg: SimConfig) -> dict:
    return {"schema": SCHEMA_VERSION, **dataclasses.asdict(cfg)}


def load_sim_config(path) -> SimConfig:
    doc = read_yaml(path)
    check_schema(doc)
    return sim_config_from_flat({k: v for k, v in doc.items() if k != "schema"})


def save_sim_config(path, cfg: SimConfig):
    _write_yaml(path, sim_config_to_dict(cfg))


# --- checkpoints and datasets ------------------------------------------------------


def save_checkpoint(directory, result: TrainResult, cfg: TrainConfig | None = None):
    """Network schema with quantized views, plus float32 masters of ternary layers.

    Layout: ``network.yaml``, ``layer{i}.tnsr`` / ``layer{i}.tern`` and
    ``layer{i}.master.tnsr``; ``train.yaml`` when ``cfg`` is given.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    save_network(directory / "network.yaml", result.net, result.weights)
    for i, master in result.shadow.full_precision.items():
        save_any(directory / f"layer{i}.master.tnsr", Tensor(master))
    if cfg is not None:
        save_train_config(directory / "train.yaml", cfg)


def load_masters(directory, net: NetworkSpec) -> dict[int, Tensor]:
    directory = Path(directory)
    out = {}
    for i in net.param_layers():
        p = directory / f"layer{i}.master.tnsr"
        if p.exists():
            out[i] = load_any(p)
    return out


def save_dataset(directory, ds: Dataset):
    """``dataset.yaml`` plus ``x.tnsr`` (samples) and ``y.tnsr`` (labels as floats)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    x = ds.x if ds.x.ndim <= 4 else ds.x.reshape(len(ds), -1)
    save_any(directory / "x.tnsr", Tensor(x))
    save_any(directory / "y.tnsr", Tensor(ds.y.astype(np.float32)))
    _write_yaml(directory / "dataset.yaml", {"schema": SCHEMA_VERSION, "name": ds.name,
                                             "classes": int(ds.classes), "n": len(ds),
                                             "x": "x.tnsr", "y": "y.tnsr"})


def load_dataset(directory) -> Dataset:
    directory = Path(directory)
    doc = read_yaml(directory / "dataset.yaml")
    check_schema(doc)
    for key in ("name", "classes", "x", "y"):
        if key not in doc:
            raise SchemaError(key, "required field missing")
    if not (_is_int(doc["classes"]) and doc["classes"] >= 2):
        raise SchemaError("classes", f"must be an integer >= 2, got {doc['classes']!r}")
    x = load_any(directory / doc["x"])
    y = load_any(directory / doc["y"])
    if not isinstance(x, Tensor) or not isinstance(y, Tensor) or len(y.shape) != 1:
        raise SchemaError("y", "x must be a TNSR and y a rank-1 TNSR")
    labels = y.data.astype(np.int64)
    if not np.array_equal(labels, y.data) or labels.min() < 0 or labels.max() >= doc["classes"]:
        raise SchemaError("y", f"labels must be integers in [0, {doc['classes']})")
    return Dataset(str(doc["name"]), np.array(x.data), labels, int(doc["classes"]))


def resolved(doc: Mapping) -> str:
    """One-line-per-key rendering used when echoing a configuration."""
    return yaml.safe_dump(dict(doc), sort_keys=False, default_flow_style=None).rstrip()


def is_dataset_dir(path) -> bool:
    return os.path.isfile(os.path.join(path, "dataset.yaml"))
