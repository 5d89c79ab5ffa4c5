"""Binary checkpoint container.

Layout (all integers little-endian)::

    magic      8 bytes   b"HYPADCK\\x00"
    version    u32
    digest     32 bytes  sha256 of the config text
    config     u32 length + UTF-8 keyed text
    count      u32
    count x    u16 name length + UTF-8 name,
               u8 ndim, ndim x u64 dims,
               prod(dims) x f64 values
"""
from __future__ import annotations

import hashlib
import struct
from pathlib import Path

import numpy as np

from .errors import CheckpointError

MAGIC = b"HYPADCK\x00"
VERSION = 1


def save(path, config_text: str, arrays: dict):
    """Write ``arrays`` (name -> float array) with the config text; returns the digest hex."""
    cfg = config_text.encode()
    digest = hashlib.sha256(cfg).digest()
    parts = [MAGIC, struct.pack("<I", VERSION), digest, struct.pack("<I", len(cfg)), cfg,
             struct.pack("<I", len(arrays))]
    for name in sorted(arrays):
        arr = np.asarray(arrays[name], dtype="<f8", order="C")
        raw = name.encode()
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(arr.tobytes())
    tmp = Path(str(path) + ".tmp")
    tmp.write_bytes(b"".join(parts))
    tmp.replace(path)
    return digest.hex()


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError("checkpoint is truncated")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load(path):
    """Return ``(config_text, arrays, digest_hex)``; verifies magic, version and digest."""
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from None
    r = _Reader(data)
    if r.take(len(MAGIC)) != MAGIC:
        raise CheckpointError(f"{path} is not a checkpoint file")
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    digest = r.take(32)
    (n,) = r.unpack("<I")
    cfg = r.take(n)
    if hashlib.sha256(cfg).digest() != digest:
        raise CheckpointError("config digest mismatch: the checkpoint header was altered")
    (count,) = r.unpack("<I")
    arrays = {}
    for _ in range(count):
        (ln,) = r.unpack("<H")
        name = r.take(ln).decode()
        (ndim,) = r.unpack("<B")
        shape = r.unpack(f"<{ndim}Q") if ndim else ()
        size = int(np.prod(shape)) if ndim else 1
        arrays[name] = np.frombuffer(r.take(8 * size), dtype="<f8").reshape(shape).astype(np.float64)
    if r.pos != len(data):
        raise CheckpointError("trailing bytes after the last array")
    return cfg.decode(), arrays, digest.hex()
