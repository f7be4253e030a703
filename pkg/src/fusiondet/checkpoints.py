"""Binary checkpoint and training-resume files.

Checkpoint layout, little-endian throughout:

    magic    4 bytes   b"GF3D"
    version  u32
    cfg_len  u64       cfg_len bytes of config JSON (sorted keys)
    count    u64
    then per tensor, sorted by name:
        name_len u64,  name (UTF-8)
        ndim     u64,  dims u64 * ndim
        data     f64 * prod(dims), C order

Sorted names and canonical config JSON make save -> load -> save
byte-identical.  The resume file (magic b"GF3T") reuses the tensor
block for parameters plus optimizer moments under "m:"/"v:" name
prefixes, and stores step counters, the shuffle-RNG state, and the
best validation mAP in a JSON meta section.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .config import RunConfig, config_from_dict
from .errors import CheckpointError, InputError
from .params import ParamStore

MAGIC = b"GF3D"
STATE_MAGIC = b"GF3T"
VERSION = 1


def _read_exact(fh, n: int, path, what: str) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise CheckpointError(f"{path}: truncated while reading {what}")
    return data


def _write_tensors(fh, tensors: dict) -> None:
    fh.write(struct.pack("<Q", len(tensors)))
    for name in sorted(tensors):
        raw = name.encode("utf-8")
        arr = np.ascontiguousarray(tensors[name], dtype="<f8")
        fh.write(struct.pack("<Q", len(raw)))
        fh.write(raw)
        fh.write(struct.pack("<Q", arr.ndim))
        for d in arr.shape:
            fh.write(struct.pack("<Q", d))
        fh.write(arr.tobytes())


def _read_tensors(fh, path) -> dict:
    (count,) = struct.unpack("<Q", _read_exact(fh, 8, path, "tensor count"))
    tensors = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<Q", _read_exact(fh, 8, path, "name length"))
        name = _read_exact(fh, nlen, path, "tensor name").decode("utf-8")
        (ndim,) = struct.unpack("<Q", _read_exact(fh, 8, path,
                                                  f"rank of '{name}'"))
        dims = struct.unpack(
            "<" + "Q" * ndim,
            _read_exact(fh, 8 * ndim, path, f"shape of '{name}'"))
        n = int(np.prod(dims, dtype=np.int64)) if ndim else 1
        data = _read_exact(fh, 8 * n, path, f"data of '{name}'")
        tensors[name] = np.frombuffer(data, dtype="<f8").reshape(dims).copy()
    return tensors


def _write_container(path, magic: bytes, doc: dict, tensors: dict) -> None:
    blob = json.dumps(doc, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(magic)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        _write_tensors(fh, tensors)


def _read_container(path, magic: bytes):
    path = Path(path)
    try:
        fh = open(path, "rb")
    except FileNotFoundError:
        raise CheckpointError(f"{path}: no such file")
    with fh:
        got = _read_exact(fh, 4, path, "magic")
        if got != magic:
            raise CheckpointError(f"{path}: bad magic {got!r}, "
                                  f"expected {magic!r}")
        (version,) = struct.unpack("<I", _read_exact(fh, 4, path, "version"))
        if version != VERSION:
            raise CheckpointError(f"{path}: unsupported version {version}")
        (blen,) = struct.unpack("<Q", _read_exact(fh, 8, path,
                                                  "config length"))
        blob = _read_exact(fh, blen, path, "config block")
        try:
            doc = json.loads(blob.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise CheckpointError(f"{path}: corrupt config block: {e}")
        tensors = _read_tensors(fh, path)
        if fh.read(1):
            raise CheckpointError(f"{path}: trailing bytes after tensors")
    return doc, tensors


# ---------------------------------------------------------------------------
# model checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(path, store: ParamStore, cfg: RunConfig) -> None:
    """Write every parameter plus the config snapshot."""
    _write_container(path, MAGIC, cfg.to_dict(), store.state_dict())


def load_checkpoint(path):
    """Read a checkpoint -> (RunConfig, {name: tensor})."""
    doc, tensors = _read_container(path, MAGIC)
    try:
        cfg = config_from_dict(doc)
    except InputError as e:
        raise CheckpointError(f"{path}: bad config snapshot: {e}")
    return cfg, tensors


def restore_params(store: ParamStore, tensors: dict) -> None:
    """Load checkpoint tensors into a registered store, strictly.

    The name sets must match exactly and every shape must agree; the
    first offending tensor is named in the error.
    """
    have = set(store.names())
    got = set(tensors)
    missing = sorted(have - got)
    if missing:
        raise CheckpointError(f"checkpoint lacks tensor '{missing[0]}'")
    extra = sorted(got - have)
    if extra:
        raise CheckpointError(f"checkpoint has unexpected tensor "
                              f"'{extra[0]}'")
    for name in sorted(tensors):
        if tensors[name].shape != store.value(name).shape:
            raise CheckpointError(
                f"tensor '{name}': checkpoint shape {tensors[name].shape} "
                f"does not match model shape {store.value(name).shape}")
    for name, arr in tensors.items():
        store.set_value(name, arr)


# ---------------------------------------------------------------------------
# training resume state
# ---------------------------------------------------------------------------

def save_training_state(path, store: ParamStore, opt, cfg: RunConfig,
                        meta: dict) -> None:
    """Write parameters + optimizer moments + loop counters in one file.

    `meta` carries epoch/step counters, the shuffle-RNG state dict and
    the best validation mAP; it must be JSON-serializable.
    """
    tensors = {}
    for name, arr in store.state_dict().items():
        tensors["p:" + name] = arr
    ostate = opt.state_dict()
    for name, arr in ostate["m"].items():
        tensors["m:" + name] = arr
    for name, arr in ostate["v"].items():
        tensors["v:" + name] = arr
    doc = {"config": cfg.to_dict(), "t": ostate["t"], "meta": meta}
    _write_container(path, STATE_MAGIC, doc, tensors)


def load_training_state(path):
    """Read a resume file -> (RunConfig, params, opt_state, meta)."""
    doc, tensors = _read_container(path, STATE_MAGIC)
    for key in ("config", "t", "meta"):
        if key not in doc:
            raise CheckpointError(f"{path}: resume meta lacks '{key}'")
    try:
        cfg = config_from_dict(doc["config"])
    except InputError as e:
        raise CheckpointError(f"{path}: bad config snapshot: {e}")
    params = {}
    moments_m = {}
    moments_v = {}
    for name, arr in tensors.items():
        kind, _, rest = name.partition(":")
        if kind == "p":
            params[rest] = arr
        elif kind == "m":
            moments_m[rest] = arr
        elif kind == "v":
            moments_v[rest] = arr
        else:
            raise CheckpointError(f"{path}: unexpected tensor '{name}'")
    if set(moments_m) != set(params) or set(moments_v) != set(params):
        raise CheckpointError(f"{path}: optimizer moments do not cover "
                              "the parameter set")
    opt_state = {"t": int(doc["t"]), "m": moments_m, "v": moments_v}
    return cfg, params, opt_state, doc["meta"]
