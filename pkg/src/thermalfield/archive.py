"""Versioned little-endian binary container for named float64 arrays.

Layout::

    b"TFLD" | u16 version | u32 header length | header JSON (utf-8) | array payloads

The JSON header carries a ``kind`` tag, free-form metadata and the ordered
list of ``{"name", "shape"}`` records describing the payloads.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"TFLD"
VERSION = 1


class ArchiveError(ValueError):
    pass


def write_archive(path: str | Path, kind: str, meta: dict, arrays: dict[str, np.ndarray]) -> None:
    records = [{"name": k, "shape": list(np.shape(v))} for k, v in arrays.items()]
    header = json.dumps({"kind": kind, "meta": meta, "arrays": records}).encode()
    parts = [MAGIC, struct.pack("<HI", VERSION, len(header)), header]
    parts += [np.ascontiguousarray(v, dtype="<f8").tobytes() for v in arrays.values()]
    Path(path).write_bytes(b"".join(parts))


def read_archive(path: str | Path, kind: str | None = None) -> tuple[dict, dict[str, np.ndarray]]:
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise ArchiveError(f"{path}: not a thermalfield archive")
    version, hlen = struct.unpack_from("<HI", data, 4)
    if version != VERSION:
        raise ArchiveError(f"{path}: unsupported archive version {version}")
    offset = 10
    header = json.loads(data[offset : offset + hlen])
    if kind is not None and header["kind"] != kind:
        raise ArchiveError(f"{path}: expected a {kind!r} archive, found {header['kind']!r}")
    offset += hlen
    arrays = {}
    for rec in header["arrays"]:
        n = int(np.prod(rec["shape"], dtype=np.int64))
        if offset + 8 * n > len(data):
            raise ArchiveError(f"{path}: truncated payload for {rec['name']}")
        arr = np.frombuffer(data, dtype="<f8", count=n, offset=offset)
        arrays[rec["name"]] = arr.astype(np.float64).reshape(rec["shape"])
        offset += 8 * n
    return header["meta"], arrays
