"""Binary model checkpoints.

Layout (all integers little-endian)::

    8 bytes   magic b"ADSQCKPT"
    uint32    format version
    uint32    header length H
    H bytes   UTF-8 JSON header: {"version", "config", "tensors": [...]}
    ...       tensor payloads, float64 little-endian, row-major, in header order

Each tensor entry records ``name``, ``shape``, ``offset`` (from the start of
the payload section) and ``nbytes``. Round trips are bitwise exact.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .architecture import ModelConfig, ModelParams

MAGIC = b"ADSQCKPT"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, params: ModelParams, config: ModelConfig):
    entries, blobs, offset = [], [], 0
    for name, t in params.named_tensors().items():
        data = np.ascontiguousarray(t, dtype="<f8").tobytes()
        entries.append({"name": name, "shape": list(t.shape), "offset": offset, "nbytes": len(data)})
        blobs.append(data)
        offset += len(data)
    header = json.dumps(
        {"version": VERSION, "config": config.to_dict(), "tensors": entries}, sort_keys=True
    ).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(header)))
        fh.write(header)
        for b in blobs:
            fh.write(b)


def load_checkpoint(path):
    """Return ``(params, config)``."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    version, hlen = struct.unpack_from("<II", blob, 8)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(blob[16 : 16 + hlen])
    base = 16 + hlen
    tensors = {}
    for e in header["tensors"]:
        count = int(np.prod(e["shape"], dtype=np.int64))
        if base + e["offset"] + e["nbytes"] > len(blob) or e["nbytes"] != 8 * count:
            raise CheckpointError(f"{path}: tensor {e['name']} is truncated")
        arr = np.frombuffer(blob, dtype="<f8", count=count, offset=base + e["offset"])
        tensors[e["name"]] = arr.reshape(e["shape"]).astype(np.float64)
    config = ModelConfig.from_dict(header["config"])
    params = ModelParams.from_tensors(tensors)
    if params.count() != ModelParams.init(config).count():
        raise CheckpointError(f"{path}: tensors do not match the recorded config")
    return params, config
