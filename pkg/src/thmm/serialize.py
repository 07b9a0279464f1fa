"""Binary model / trainer-state container and JSON sidecar.

Layout (little-endian)::

    b"THMM"  u32 version  u32 kind (0 model, 1 trainer state)
    u64 N  u64 V  u64 S  i64 seed
    f64 trans[S, N, N]  f64 emis[S, N, V]  f64 root[S, N]
    -- kind 1 only --
    u64 t  u64 epoch  f64 tree_count
    f64 tau[S, N, N]  f64 omega[S, N, V]  f64 rho[S, N]
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import BinaryIO

import numpy as np

from .model import ModelMeta, ModelParams
from .training import SufficientStats, TrainerState

MAGIC = b"THMM"
VERSION = 1
KIND_MODEL = 0
KIND_STATE = 1

_HEAD = struct.Struct("<4sII")
_META = struct.Struct("<QQQq")
_STEP = struct.Struct("<QQd")
_F64 = np.dtype("<f8")


class FormatError(ValueError):
    pass


def _write_model(f: BinaryIO, params: ModelParams, kind: int) -> None:
    m = params.meta
    f.write(_HEAD.pack(MAGIC, VERSION, kind))
    f.write(_META.pack(m.n_states, m.n_words, m.n_funcs, m.seed))
    for a in (params.trans, params.emis, params.root):
        f.write(np.ascontiguousarray(a, dtype=_F64).tobytes())


def _read_array(f: BinaryIO, shape: tuple[int, ...]) -> np.ndarray:
    n = int(np.prod(shape))
    buf = f.read(n * 8)
    if len(buf) != n * 8:
        raise FormatError("truncated tensor data")
    return np.frombuffer(buf, dtype=_F64).reshape(shape).astype(np.float64)


def _read_model(f: BinaryIO) -> tuple[int, ModelParams]:
    head = f.read(_HEAD.size)
    if len(head) != _HEAD.size:
        raise FormatError("file too short")
    magic, version, kind = _HEAD.unpack(head)
    if magic != MAGIC:
        raise FormatError("not a THMM file")
    if version != VERSION:
        raise FormatError(f"unsupported format version {version}")
    raw = f.read(_META.size)
    if len(raw) != _META.size:
        raise FormatError("truncated header")
    N, V, S, seed = _META.unpack(raw)
    meta = ModelMeta(N, V, S, seed)
    trans = _read_array(f, (S, N, N))
    emis = _read_array(f, (S, N, V))
    root = _read_array(f, (S, N))
    return kind, ModelParams(meta, trans, emis, root)


def save_model(path: str | Path, params: ModelParams, sidecar: dict | None = None) -> None:
    """Write the binary model and, if given, ``<path>.json`` with meta and
    ``sidecar`` merged in."""
    with open(path, "wb") as f:
        _write_model(f, params, KIND_MODEL)
    if sidecar is not None:
        write_sidecar(path, params.meta, sidecar)


def write_sidecar(path: str | Path, meta: ModelMeta, extra: dict) -> None:
    doc = {"format": "THMM", "version": VERSION,
           "meta": {"n_states": meta.n_states, "n_words": meta.n_words,
                    "n_funcs": meta.n_funcs, "seed": meta.seed}}
    doc.update(extra)
    Path(f"{path}.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def read_sidecar(path: str | Path) -> dict:
    return json.loads(Path(f"{path}.json").read_text())


def load_model(path: str | Path) -> ModelParams:
    with open(path, "rb") as f:
        _, params = _read_model(f)
    return params


def save_state(path: str | Path, params: ModelParams, state: TrainerState) -> None:
    if state.mu is None:
        raise ValueError("trainer state has no statistics")
    with open(path, "wb") as f:
        _write_model(f, params, KIND_STATE)
        f.write(_STEP.pack(state.t, state.epoch, state.mu.tree_count))
        for a in (state.mu.tau, state.mu.omega, state.mu.rho):
            f.write(np.ascontiguousarray(a, dtype=_F64).tobytes())


def load_state(path: str | Path) -> tuple[ModelParams, TrainerState]:
    with open(path, "rb") as f:
        kind, params = _read_model(f)
        if kind != KIND_STATE:
            raise FormatError("file holds a model, not a trainer state")
        raw = f.read(_STEP.size)
        if len(raw) != _STEP.size:
            raise FormatError("truncated trainer state")
        t, epoch, count = _STEP.unpack(raw)
        N, V, S = params.N, params.meta.n_words, params.meta.n_funcs
        mu = SufficientStats(_read_array(f, (S, N, N)), _read_array(f, (S, N, V)),
                             _read_array(f, (S, N)), count)
    return params, TrainerState(t, epoch, mu)
