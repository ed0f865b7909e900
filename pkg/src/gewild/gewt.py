"""GEWT tensor archives: the on-disk format for checkpoints and feature caches.

Layout (all integers little-endian u32):

    "GEWT" | version | count | count * (name_len | name utf-8 | rank | dims... | f32 data)

Writes are deterministic for a given entry order, so save -> load -> save
round-trips bit-exactly.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import ParseError

MAGIC = b"GEWT"
VERSION = 1

_U32 = struct.Struct("<I")


def save_archive(path: str | Path, tensors: dict[str, np.ndarray]) -> None:
    """Write named float32 arrays to `path` in insertion order."""
    blob = bytearray()
    blob += MAGIC
    blob += _U32.pack(VERSION)
    blob += _U32.pack(len(tensors))
    for name, arr in tensors.items():
        # asarray keeps rank-0 inputs rank 0 (ascontiguousarray would not)
        data = np.asarray(arr, dtype="<f4", order="C")
        encoded = name.encode("utf-8")
        blob += _U32.pack(len(encoded))
        blob += encoded
        blob += _U32.pack(data.ndim)
        for dim in data.shape:
            blob += _U32.pack(dim)
        blob += data.tobytes()
    Path(path).write_bytes(bytes(blob))


def load_archive(path: str | Path) -> dict[str, np.ndarray]:
    """Read a GEWT archive back into {name: float32 array}, preserving order."""
    raw = Path(path).read_bytes()
    off = 0

    def take(n: int, what: str) -> bytes:
        nonlocal off
        if off + n > len(raw):
            raise ParseError(f"truncated archive while reading {what}", offset=off)
        chunk = raw[off : off + n]
        off += n
        return chunk

    if take(4, "magic") != MAGIC:
        raise ParseError(f"bad magic bytes, expected {MAGIC!r}", offset=0)
    version = _U32.unpack(take(4, "version"))[0]
    if version != VERSION:
        raise ParseError(f"unsupported archive version {version}", offset=4)
    count = _U32.unpack(take(4, "entry count"))[0]

    out: dict[str, np.ndarray] = {}
    for i in range(count):
        name_len = _U32.unpack(take(4, f"entry {i} name length"))[0]
        name = take(name_len, f"entry {i} name").decode("utf-8")
        rank = _U32.unpack(take(4, f"{name} rank"))[0]
        shape = tuple(
            _U32.unpack(take(4, f"{name} dim {d}"))[0] for d in range(rank)
        )
        n_items = 1
        for dim in shape:
            n_items *= dim
        data = take(4 * n_items, f"{name} data")
        out[name] = np.frombuffer(data, dtype="<f4").reshape(shape).copy()
    if off != len(raw):
        raise ParseError(f"{len(raw) - off} trailing bytes after last entry", offset=off)
    return out
