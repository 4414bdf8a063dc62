"""The "DMT1" named-tensor container.

Layout: ``b"DMT1"``, a little-endian uint32 byte length, a UTF-8 JSON manifest
``{"meta": {...}, "tensors": [{"name", "dtype": "f32", "shape"}, ...]}``, then
each array as raw little-endian float32 in manifest order.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"DMT1"
_F32 = np.dtype("<f4")


class CheckpointError(ValueError):
    pass


def dumps(arrays: dict[str, np.ndarray], meta: dict | None = None) -> bytes:
    entries, blobs = [], []
    for name, arr in arrays.items():
        a = np.ascontiguousarray(np.asarray(arr), dtype=_F32)
        entries.append({"name": name, "dtype": "f32", "shape": list(a.shape)})
        blobs.append(a.tobytes())
    manifest = json.dumps({"meta": meta or {}, "tensors": entries}, sort_keys=True).encode("utf-8")
    return MAGIC + struct.pack("<I", len(manifest)) + manifest + b"".join(blobs)


def loads(buf: bytes) -> tuple[dict[str, np.ndarray], dict]:
    if buf[:4] != MAGIC:
        raise CheckpointError("not a DMT1 checkpoint (bad magic)")
    (n,) = struct.unpack("<I", buf[4:8])
    manifest = json.loads(buf[8: 8 + n].decode("utf-8"))
    offset = 8 + n
    arrays = {}
    for entry in manifest["tensors"]:
        if entry["dtype"] != "f32":
            raise CheckpointError(f"unsupported dtype {entry['dtype']!r} for {entry['name']}")
        shape = tuple(entry["shape"])
        count = int(np.prod(shape, dtype=np.int64))
        end = offset + 4 * count
        if end > len(buf):
            raise CheckpointError(f"truncated checkpoint while reading {entry['name']}")
        arrays[entry["name"]] = np.frombuffer(buf[offset:end], dtype=_F32).reshape(shape).copy()
        offset = end
    if offset != len(buf):
        raise CheckpointError(f"{len(buf) - offset} trailing bytes after last tensor")
    return arrays, manifest["meta"]


def save(path, arrays: dict[str, np.ndarray], meta: dict | None = None) -> None:
    Path(path).write_bytes(dumps(arrays, meta))


def load(path) -> tuple[dict[str, np.ndarray], dict]:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"checkpoint not found: {p}")
    return loads(p.read_bytes())
