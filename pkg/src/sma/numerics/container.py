"""Binary tensor container.

Layout (all integers little-endian)::

    offset 0   8 bytes   magic b"SMATENS\\0"
    offset 8   u32       format version (currently 1)
    offset 12  u64       header length H in bytes
    offset 20  H bytes   UTF-8 JSON header, keys sorted, no whitespace:
                         {"entries": [{"name", "dtype", "shape", "offset", "nbytes"}, ...],
                          "meta": {...}}
    offset 20+H          raw entry values, C order, back to back; each entry's
                         "offset" is relative to the start of this region

``dtype`` is one of "<f8", "<f4", "<i8".  Writing the same entries and meta
always produces the same bytes.
"""

from __future__ import annotations

import hashlib
import io
import json
import struct
from pathlib import Path
from typing import Mapping

import numpy as np

MAGIC = b"SMATENS\0"
VERSION = 1
_DTYPES = {"<f8", "<f4", "<i8"}


class ContainerError(ValueError):
    pass


def to_bytes(entries: Mapping[str, np.ndarray], meta: Mapping | None = None) -> bytes:
    records = []
    blobs = []
    offset = 0
    for name, arr in entries.items():
        arr = np.ascontiguousarray(arr)
        dtype = arr.dtype.newbyteorder("<").str
        if dtype not in _DTYPES:
            raise ContainerError(f"unsupported dtype {arr.dtype} for entry {name!r}")
        raw = arr.astype(dtype, copy=False).tobytes(order="C")
        records.append({"name": name, "dtype": dtype, "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    header = json.dumps({"entries": records, "meta": dict(meta or {})}, sort_keys=True, separators=(",", ":"))
    hbytes = header.encode("utf-8")
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<IQ", VERSION, len(hbytes)))
    buf.write(hbytes)
    for raw in blobs:
        buf.write(raw)
    return buf.getvalue()


def from_bytes(blob: bytes) -> tuple[dict[str, np.ndarray], dict]:
    if blob[:8] != MAGIC:
        raise ContainerError("not a tensor container (bad magic)")
    version, hlen = struct.unpack("<IQ", blob[8:20])
    if version != VERSION:
        raise ContainerError(f"unsupported container version {version}")
    header = json.loads(blob[20 : 20 + hlen].decode("utf-8"))
    data = memoryview(blob)[20 + hlen :]
    entries = {}
    for rec in header["entries"]:
        if rec["dtype"] not in _DTYPES:
            raise ContainerError(f"unsupported dtype {rec['dtype']}")
        chunk = data[rec["offset"] : rec["offset"] + rec["nbytes"]]
        if len(chunk) != rec["nbytes"]:
            raise ContainerError(f"truncated entry {rec['name']!r}")
        arr = np.frombuffer(chunk, dtype=np.dtype(rec["dtype"])).reshape(rec["shape"]).copy()
        entries[rec["name"]] = arr
    return entries, header["meta"]


def save(path, entries: Mapping[str, np.ndarray], meta: Mapping | None = None) -> str:
    """Write the container; returns the sha256 of the written bytes."""
    blob = to_bytes(entries, meta)
    Path(path).write_bytes(blob)
    return hashlib.sha256(blob).hexdigest()


def load(path) -> tuple[dict[str, np.ndarray], dict]:
    return from_bytes(Path(path).read_bytes())
