"""Model checkpoints.

Layout (little-endian): magic "SPNN", u16 format version, u32 header
length, then a UTF-8 JSON header describing the layer specs, class
labels, which statistics set evaluation uses, training counters, and an
array table (name, dtype, shape, byte offset); the raw little-endian
array payloads follow. Parameter tensors, both BN statistics sets, and
(optionally) the optimizer state are stored.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from ..errors import DataError
from .layers import BatchNorm
from .network import CnnModel, LayerSpec, build_model
from .optim import AdamState, SgdmState

__all__ = ["save_checkpoint", "load_checkpoint"]

MAGIC = b"SPNN"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<4sHI")

_DTYPES = {"f4": "<f4", "f8": "<f8", "i8": "<i8"}


def _dtype_code(arr: np.ndarray) -> str:
    code = arr.dtype.str.lstrip("<>|=")
    if code not in _DTYPES:
        raise DataError(f"cannot serialize dtype {arr.dtype}")
    return code


def _collect_arrays(model: CnnModel, optimizer_state) -> dict[str, np.ndarray]:
    arrays = dict(model.parameters())
    for i, layer in enumerate(model.layers):
        if isinstance(layer, BatchNorm):
            arrays[f"{i}.bn.moving_mean"] = layer.moving_mean
            arrays[f"{i}.bn.moving_var"] = layer.moving_var
            if layer.population_mean is not None:
                arrays[f"{i}.bn.population_mean"] = layer.population_mean
                arrays[f"{i}.bn.population_var"] = layer.population_var
    if isinstance(optimizer_state, AdamState):
        for key, value in optimizer_state.m.items():
            arrays[f"opt.m.{key}"] = value
        for key, value in optimizer_state.v.items():
            arrays[f"opt.v.{key}"] = value
    elif isinstance(optimizer_state, SgdmState):
        for key, value in optimizer_state.velocity.items():
            arrays[f"opt.velocity.{key}"] = value
    return arrays


def save_checkpoint(path, model: CnnModel, optimizer_state=None, step: int = 0, epoch: int = 0) -> None:
    arrays = _collect_arrays(model, optimizer_state)
    table = []
    offset = 0
    payloads = []
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name])
        code = _dtype_code(arr)
        raw = arr.astype(_DTYPES[code], copy=False).tobytes()
        table.append({"name": name, "dtype": code, "shape": list(arr.shape), "offset": offset})
        payloads.append(raw)
        offset += len(raw)

    opt_kind = None
    opt_t = 0
    if isinstance(optimizer_state, AdamState):
        opt_kind, opt_t = "adam", optimizer_state.t
    elif isinstance(optimizer_state, SgdmState):
        opt_kind = "sgdm"

    header = {
        "specs": [{"kind": s.kind, "args": s.args} for s in model.specs],
        "input_shape": list(model.input_shape),
        "class_labels": list(model.class_labels),
        "dtype": _dtype_code(np.zeros(1, dtype=model.dtype)),
        "eval_stats": model.bn_layers[0].eval_stats if model.bn_layers else "moving",
        "step": step,
        "epoch": epoch,
        "optimizer": opt_kind,
        "adam_t": opt_t,
        "arrays": table,
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_PREFIX.pack(MAGIC, FORMAT_VERSION, len(blob)))
        fh.write(blob)
        for raw in payloads:
            fh.write(raw)


def load_checkpoint(path) -> tuple[CnnModel, object, dict]:
    """Return (model, optimizer_state or None, meta with step/epoch)."""
    with open(path, "rb") as fh:
        prefix = fh.read(_PREFIX.size)
        if len(prefix) < _PREFIX.size:
            raise DataError(f"{path}: truncated checkpoint")
        magic, version, header_len = _PREFIX.unpack(prefix)
        if magic != MAGIC:
            raise DataError(f"{path}: bad magic {magic!r}")
        if version != FORMAT_VERSION:
            raise DataError(f"{path}: unsupported checkpoint version {version}")
        header = json.loads(fh.read(header_len).decode())
        payload = fh.read()

    arrays = {}
    for item in header["arrays"]:
        dtype = np.dtype(_DTYPES[item["dtype"]])
        count = int(np.prod(item["shape"])) if item["shape"] else 1
        start = item["offset"]
        data = np.frombuffer(payload, dtype=dtype, count=count, offset=start)
        arrays[item["name"]] = data.reshape(item["shape"]).astype(dtype.newbyteorder("="))

    specs = [LayerSpec(s["kind"], s["args"]) for s in header["specs"]]
    model = build_model(
        specs,
        tuple(header["input_shape"]),
        header["class_labels"],
        dtype=np.dtype(_DTYPES[header["dtype"]]).type,
    )
    model.set_parameters({k: v for k, v in arrays.items() if k in model.parameters()})
    for i, layer in enumerate(model.layers):
        if isinstance(layer, BatchNorm):
            layer.moving_mean = arrays[f"{i}.bn.moving_mean"].copy()
            layer.moving_var = arrays[f"{i}.bn.moving_var"].copy()
            if f"{i}.bn.population_mean" in arrays:
                layer.population_mean = arrays[f"{i}.bn.population_mean"].copy()
                layer.population_var = arrays[f"{i}.bn.population_var"].copy()
    if header["eval_stats"] == "population" and model.bn_layers and model.bn_layers[0].population_mean is not None:
        model.set_eval_stats("population")

    optimizer_state = None
    if header["optimizer"] == "adam":
        optimizer_state = AdamState(t=header["adam_t"])
        for name, value in arrays.items():
            if name.startswith("opt.m."):
                optimizer_state.m[name[len("opt.m."):]] = value.copy()
            elif name.startswith("opt.v."):
                optimizer_state.v[name[len("opt.v."):]] = value.copy()
    elif header["optimizer"] == "sgdm":
        optimizer_state = SgdmState()
        for name, value in arrays.items():
            if name.startswith("opt.velocity."):
                optimizer_state.velocity[name[len("opt.velocity."):]] = value.copy()

    meta = {"step": header["step"], "epoch": header["epoch"]}
    return model, optimizer_state, meta
