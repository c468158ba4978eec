"""Versioned binary checkpoints.

Layout (all integers little-endian uint32):

    8 bytes   magic  b"COATNET1"
    u32       format version (currently 1)
    u32       config length,   then that many bytes of model-config JSON
    u32       manifest length, then that many bytes of manifest JSON
    raw tensor bytes, concatenated in manifest order

The manifest is a list of {name, dtype, shape, offset, nbytes} with offsets
relative to the start of the data section; dtypes are little-endian numpy
strings ('<f4', '<f8'). Every stateful tensor is stored: trainable weights,
relative-bias tables, and norm running statistics. Loading rebuilds the
model from the stored config and refuses manifests whose names or shapes
disagree with it. Writing is fully deterministic (no timestamps), so equal
models produce byte-identical files.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .config import config_from_dict, config_to_dict
from .errors import CorruptCheckpointError, IncompatibleCheckpointError
from .model import Model, build_model

MAGIC = b"COATNET1"
VERSION = 1


def save_checkpoint(model: Model, path: str, override: dict | None = None) -> None:
    """Write the model state; `override` substitutes values by name (used to
    store the EMA shadow with the same manifest)."""
    override = override or {}
    entries = []
    blobs = []
    offset = 0
    for name, t in model.named_tensors():
        arr = np.asarray(override.get(name, t.data))
        arr = np.ascontiguousarray(arr, dtype=arr.dtype.newbyteorder("<"))
        blob = arr.tobytes()
        entries.append({"name": name, "dtype": arr.dtype.str, "shape": list(arr.shape),
                        "offset": offset, "nbytes": len(blob)})
        blobs.append(blob)
        offset += len(blob)
    config_json = json.dumps(config_to_dict(model.cfg), sort_keys=True).encode()
    manifest_json = json.dumps(entries, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        f.write(struct.pack("<I", len(config_json)))
        f.write(config_json)
        f.write(struct.pack("<I", len(manifest_json)))
        f.write(manifest_json)
        for blob in blobs:
            f.write(blob)


def _read_exact(f, n: int, what: str) -> bytes:
    b = f.read(n)
    if len(b) != n:
        raise CorruptCheckpointError(f"truncated checkpoint while reading {what}")
    return b


def load_checkpoint(path: str, seed: int = 0) -> Model:
    """Rebuild the model from the stored config and restore every tensor
    bit-exactly; validates the manifest against the rebuilt shape set."""
    with open(path, "rb") as f:
        if _read_exact(f, 8, "magic") != MAGIC:
            raise CorruptCheckpointError(f"{path} is not a checkpoint (bad magic)")
        (version,) = struct.unpack("<I", _read_exact(f, 4, "version"))
        if version != VERSION:
            raise IncompatibleCheckpointError(f"unsupported checkpoint version {version}")
        (clen,) = struct.unpack("<I", _read_exact(f, 4, "config length"))
        try:
            cfg_dict = json.loads(_read_exact(f, clen, "config"))
        except json.JSONDecodeError as e:
            raise CorruptCheckpointError(f"config block is not valid JSON: {e}") from None
        (mlen,) = struct.unpack("<I", _read_exact(f, 4, "manifest length"))
        try:
            manifest = json.loads(_read_exact(f, mlen, "manifest"))
        except json.JSONDecodeError as e:
            raise CorruptCheckpointError(f"manifest block is not valid JSON: {e}") from None
        data = f.read()

    cfg = config_from_dict(cfg_dict)
    model = build_model(cfg, seed=seed)
    expected = {name: t for name, t in model.named_tensors()}
    stored = {e["name"]: e for e in manifest}
    if set(expected) != set(stored):
        missing = sorted(set(expected) - set(stored))[:3]
        extra = sorted(set(stored) - set(expected))[:3]
        raise IncompatibleCheckpointError(
            f"manifest disagrees with config (missing {missing}, unexpected {extra})")
    for name, t in expected.items():
        e = stored[name]
        if tuple(e["shape"]) != t.shape:
            raise IncompatibleCheckpointError(
                f"{name}: stored shape {tuple(e['shape'])} != expected {t.shape}")
        end = e["offset"] + e["nbytes"]
        if end > len(data):
            raise CorruptCheckpointError(f"truncated checkpoint: {name} data missing")
        arr = np.frombuffer(data[e["offset"]:end], dtype=np.dtype(e["dtype"]))
        t.assign(arr.reshape(tuple(e["shape"])).astype(t.dtype))
    return model
