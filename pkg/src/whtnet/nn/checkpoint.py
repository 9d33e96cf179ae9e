"""Versioned binary checkpoint container.

Layout (all integers little-endian)::

    b"WHTCKPT\\0"                 magic, 8 bytes
    u32 version                   currently 1
    u32 n, n bytes                UTF-8 JSON config echo (sorted keys)
    u32 count                     number of tensors
    per tensor:
        u16 n, n bytes            UTF-8 name
        u8  ndim, u32 * ndim      dims
        f64 * prod(dims)          data, C order
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from ..errors import WhtError

MAGIC = b"WHTCKPT\0"
VERSION = 1


class CheckpointError(WhtError, ValueError):
    pass


def encode(tensors: dict[str, np.ndarray], config: dict | None = None) -> bytes:
    cfg = json.dumps(config or {}, sort_keys=True, default=str).encode()
    out = [MAGIC, struct.pack("<II", VERSION, len(cfg)), cfg, struct.pack("<I", len(tensors))]
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name], dtype="<f8")
        raw = name.encode()
        out.append(struct.pack("<H", len(raw)) + raw)
        out.append(struct.pack(f"<B{arr.ndim}I", arr.ndim, *arr.shape))
        out.append(arr.tobytes())
    return b"".join(out)


def decode(blob: bytes) -> tuple[dict[str, np.ndarray], dict]:
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(blob):
            raise CheckpointError("truncated checkpoint")
        chunk = blob[pos:pos + n]
        pos += n
        return chunk

    if take(8) != MAGIC:
        raise CheckpointError("not a whtnet checkpoint (bad magic)")
    version, n = struct.unpack("<II", take(8))
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    config = json.loads(take(n).decode())
    (count,) = struct.unpack("<I", take(4))
    tensors = {}
    for _ in range(count):
        (n,) = struct.unpack("<H", take(2))
        name = take(n).decode()
        (ndim,) = struct.unpack("<B", take(1))
        dims = struct.unpack(f"<{ndim}I", take(4 * ndim))
        size = int(np.prod(dims, dtype=np.int64))
        tensors[name] = np.frombuffer(take(8 * size), dtype="<f8").reshape(dims).copy()
    if pos != len(blob):
        raise CheckpointError("trailing bytes after checkpoint")
    return tensors, config


def save(path, tensors: dict[str, np.ndarray], config: dict | None = None) -> None:
    Path(path).write_bytes(encode(tensors, config))


def load(path) -> tuple[dict[str, np.ndarray], dict]:
    return decode(Path(path).read_bytes())
