"""Single-file checkpoint container.

Layout: 8 magic bytes, a little-endian uint64 header length, a JSON header
(schema version, free-form metadata, parameter manifest with name/shape/byte
offset), then concatenated little-endian float32 blobs. Round trips are
bit-exact; offsets are validated on load.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import CorruptCheckpoint, VersionMismatch

__all__ = ["save_checkpoint", "load_checkpoint", "SCHEMA_VERSION", "MAGIC"]

MAGIC = b"VECDIFCK"
SCHEMA_VERSION = 1


def save_checkpoint(path, params: dict[str, np.ndarray], meta: dict) -> None:
    """Write named float32 arrays plus JSON-able metadata."""
    manifest = []
    blobs = []
    offset = 0
    for name, arr in params.items():
        arr = np.asarray(arr, dtype="<f4")
        manifest.append({"name": name, "shape": list(arr.shape), "offset": offset})
        raw = arr.tobytes()  # C order, preserves 0-d shapes
        blobs.append(raw)
        offset += len(raw)
    header = json.dumps({"schema": SCHEMA_VERSION, "meta": meta, "params": manifest}).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<Q", len(header)))
        f.write(header)
        for raw in blobs:
            f.write(raw)


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    """Read a container back; raises CorruptCheckpoint / VersionMismatch."""
    data = Path(path).read_bytes()
    if len(data) < len(MAGIC) + 8:
        raise CorruptCheckpoint("file shorter than the fixed header")
    if data[: len(MAGIC)] != MAGIC:
        raise CorruptCheckpoint("bad magic bytes")
    (header_len,) = struct.unpack("<Q", data[len(MAGIC) : len(MAGIC) + 8])
    header_end = len(MAGIC) + 8 + header_len
    if header_end > len(data):
        raise CorruptCheckpoint("header extends past end of file")
    try:
        header = json.loads(data[len(MAGIC) + 8 : header_end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CorruptCheckpoint(f"unreadable header: {e}") from e
    if header.get("schema") != SCHEMA_VERSION:
        raise VersionMismatch(f"schema {header.get('schema')!r}, expected {SCHEMA_VERSION}")
    blob = data[header_end:]
    params = {}
    spans = []
    for entry in header["params"]:
        shape = tuple(entry["shape"])
        size = int(np.prod(shape, dtype=np.int64)) * 4 if shape else 4
        start = entry["offset"]
        end = start + size
        if start < 0 or end > len(blob):
            raise CorruptCheckpoint(f"parameter {entry['name']!r} out of bounds (truncated file?)")
        spans.append((start, end, entry["name"]))
        params[entry["name"]] = np.frombuffer(blob[start:end], dtype="<f4").reshape(shape).copy()
    spans.sort()
    for (s1, e1, n1), (s2, e2, n2) in zip(spans, spans[1:]):
        if s2 < e1:
            raise CorruptCheckpoint(f"overlapping blobs for {n1!r} and {n2!r}")
    return params, header["meta"]
