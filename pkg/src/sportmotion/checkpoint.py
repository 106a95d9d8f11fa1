"""Versioned binary checkpoints of named float64 arrays.

Layout: ``b"SCKP"``, a little-endian uint32 format version, a uint64 header
length, a JSON header listing ``{"name", "shape"}`` entries plus free-form
metadata, then each array's raw little-endian float64 bytes in header order.
Nothing time- or platform-dependent is written, so equal inputs give
byte-identical files.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Mapping

import numpy as np

MAGIC = b"SCKP"
VERSION = 1


class CheckpointError(ValueError):
    pass


def dumps(arrays: Mapping[str, np.ndarray], meta: dict | None = None) -> bytes:
    entries = []
    blobs = []
    for name, arr in arrays.items():
        a = np.ascontiguousarray(arr, dtype="<f8")
        entries.append({"name": name, "shape": list(a.shape)})
        blobs.append(a.tobytes())
    header = json.dumps({"tensors": entries, "meta": meta or {}}, sort_keys=True).encode()
    return MAGIC + struct.pack("<IQ", VERSION, len(header)) + header + b"".join(blobs)


def loads(data: bytes, expected_shapes: Mapping[str, tuple] | None = None):
    """Parse checkpoint bytes into ``(arrays, meta)``.

    With ``expected_shapes`` every listed tensor must be present with exactly
    that shape, and no extra tensors are allowed.
    """
    if data[:4] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    version, hlen = struct.unpack_from("<IQ", data, 4)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    start = 4 + struct.calcsize("<IQ")
    header = json.loads(data[start:start + hlen])
    pos = start + hlen
    arrays = {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        n = int(np.prod(shape)) if shape else 1
        end = pos + 8 * n
        if end > len(data):
            raise CheckpointError(f"truncated data for tensor {entry['name']!r}")
        arrays[entry["name"]] = np.frombuffer(data[pos:end], dtype="<f8").reshape(shape).astype(np.float64)
        pos = end
    if pos != len(data):
        raise CheckpointError("trailing bytes after last tensor")
    if expected_shapes is not None:
        missing = set(expected_shapes) - set(arrays)
        extra = set(arrays) - set(expected_shapes)
        if missing or extra:
            raise CheckpointError(f"tensor names differ: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for name, shape in expected_shapes.items():
            if arrays[name].shape != tuple(shape):
                raise CheckpointError(f"{name}: shape {arrays[name].shape}, expected {tuple(shape)}")
    return arrays, header["meta"]


def save(path, arrays: Mapping[str, np.ndarray], meta: dict | None = None) -> None:
    Path(path).write_bytes(dumps(arrays, meta))


def load(path, expected_shapes: Mapping[str, tuple] | None = None):
    return loads(Path(path).read_bytes(), expected_shapes)
