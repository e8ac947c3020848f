"""Binary checkpoint container for every model kind.

Layout (all integers u32 little-endian, all floats f64 little-endian):

  magic "IMIX" | version | kind | kind-specific body

  kind 0 stochastic net : n_layers, per-layer (n_rows, n_cols),
                          then per layer mean (row-major), row_scale_raw,
                          col_scale_raw
  kind 1 deterministic  : n_layers, per-layer dims, per-layer weights
  kind 2 dropout        : p_drop, then a kind-1 body
  kind 3 ensemble       : n_members, then n_members kind-1 bodies

Round trips are bit-exact; writes go through a temp file + rename so a
concurrent reader never sees a torn checkpoint.
"""

from __future__ import annotations

import os
import struct

import numpy as np

from .baselines import DeepEnsemble, DeterministicMlp, DropoutMlp
from .network import StochasticMlp
from .posterior import MvnLayerPosterior

MAGIC = b"IMIX"
VERSION = 1

KIND_STOCHASTIC = 0
KIND_DETERMINISTIC = 1
KIND_DROPOUT = 2
KIND_ENSEMBLE = 3


class CheckpointError(ValueError):
    """Malformed or mismatched checkpoint contents."""


def _write_u32(f, value: int):
    f.write(struct.pack("<I", value))


def _read_u32(f) -> int:
    raw = f.read(4)
    if len(raw) < 4:
        raise CheckpointError("truncated checkpoint (u32)")
    return struct.unpack("<I", raw)[0]


def _write_f64s(f, arr: np.ndarray):
    f.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def _read_f64s(f, shape) -> np.ndarray:
    n = int(np.prod(shape))
    raw = f.read(8 * n)
    if len(raw) < 8 * n:
        raise CheckpointError("truncated checkpoint (payload)")
    return np.frombuffer(raw, dtype="<f8").reshape(shape).astype(np.float64)


def _write_weight_stack(f, weights):
    _write_u32(f, len(weights))
    for w in weights:
        _write_u32(f, w.shape[0])
        _write_u32(f, w.shape[1])
    for w in weights:
        _write_f64s(f, w)


def _read_weight_stack(f):
    n_layers = _read_u32(f)
    dims = [(_read_u32(f), _read_u32(f)) for _ in range(n_layers)]
    return [_read_f64s(f, dims[l]) for l in range(n_layers)]


def save_model(model, path) -> None:
    tmp = str(path) + ".tmp"
    with open(tmp, "wb") as f:
        f.write(MAGIC)
        _write_u32(f, VERSION)
        if isinstance(model, StochasticMlp):
            _write_u32(f, KIND_STOCHASTIC)
            _write_u32(f, len(model.layers))
            for layer in model.layers:
                _write_u32(f, layer.n_rows)
                _write_u32(f, layer.n_cols)
            for layer in model.layers:
                _write_f64s(f, layer.mean)
                _write_f64s(f, layer.row_scale_raw)
                _write_f64s(f, layer.col_scale_raw)
        elif isinstance(model, DropoutMlp):
            _write_u32(f, KIND_DROPOUT)
            _write_f64s(f, np.array([model.p_drop]))
            _write_weight_stack(f, model.weights)
        elif isinstance(model, DeterministicMlp):
            _write_u32(f, KIND_DETERMINISTIC)
            _write_weight_stack(f, model.weights)
        elif isinstance(model, DeepEnsemble):
            _write_u32(f, KIND_ENSEMBLE)
            _write_u32(f, model.k)
            for member in model.members:
                _write_weight_stack(f, member.weights)
        else:
            raise CheckpointError(f"cannot checkpoint {type(model).__name__}")
    os.replace(tmp, path)


def load_model(path):
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != MAGIC:
            raise CheckpointError(f"bad checkpoint magic {magic!r} in {path}")
        version = _read_u32(f)
        if version != VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        kind = _read_u32(f)
        if kind == KIND_STOCHASTIC:
            n_layers = _read_u32(f)
            dims = [(_read_u32(f), _read_u32(f)) for _ in range(n_layers)]
            layers = []
            for n_rows, n_cols in dims:
                mean = _read_f64s(f, (n_rows, n_cols))
                a = _read_f64s(f, (n_rows,))
                b = _read_f64s(f, (n_cols,))
                layers.append(MvnLayerPosterior(mean=mean, row_scale_raw=a,
                                                col_scale_raw=b))
            return StochasticMlp(layers=layers)
        if kind == KIND_DROPOUT:
            p_drop = float(_read_f64s(f, (1,))[0])
            return DropoutMlp(weights=_read_weight_stack(f), p_drop=p_drop)
        if kind == KIND_DETERMINISTIC:
            return DeterministicMlp(weights=_read_weight_stack(f))
        if kind == KIND_ENSEMBLE:
            n_members = _read_u32(f)
            members = [DeterministicMlp(weights=_read_weight_stack(f))
                       for _ in range(n_members)]
            return DeepEnsemble(members=members)
        raise CheckpointError(f"unknown model kind {kind} in {path}")
