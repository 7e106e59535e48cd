"""Binary checkpoint files: named float64 parameter table with a checksum.

Layout (all integers little-endian):

    8 bytes   magic b"DGCHKPT\\x00"
    u32       format version (1)
    u32       parameter count
    per parameter:
        u16       name length, then UTF-8 name
        u8        ndim, then ndim * u32 dims
        float64   row-major data, little-endian
    32 bytes  SHA-256 of everything before the footer
"""

from __future__ import annotations

import hashlib
import struct
from pathlib import Path

import numpy as np

MAGIC = b"DGCHKPT\x00"
VERSION = 1


class CheckpointError(Exception):
    pass


def save_checkpoint(path, state: dict[str, np.ndarray]) -> None:
    chunks = [MAGIC, struct.pack("<II", VERSION, len(state))]
    for name in state:
        arr = np.asarray(state[name], dtype="<f8")
        name_b = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(name_b)))
        chunks.append(name_b)
        chunks.append(struct.pack("<B", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.tobytes())
    body = b"".join(chunks)
    digest = hashlib.sha256(body).digest()
    Path(path).write_bytes(body + digest)


def load_checkpoint(path) -> dict[str, np.ndarray]:
    raw = Path(path).read_bytes()
    if len(raw) < len(MAGIC) + 8 + 32:
        raise CheckpointError(f"{path}: truncated file")
    body, digest = raw[:-32], raw[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointError(f"{path}: checksum mismatch")
    if body[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {body[:8]!r}")
    off = len(MAGIC)
    version, count = struct.unpack_from("<II", body, off)
    off += 8
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    state: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", body, off)
        off += 2
        name = body[off : off + name_len].decode("utf-8")
        off += name_len
        (ndim,) = struct.unpack_from("<B", body, off)
        off += 1
        dims = struct.unpack_from(f"<{ndim}I", body, off)
        off += 4 * ndim
        n = int(np.prod(dims)) if ndim else 1
        arr = np.frombuffer(body, dtype="<f8", count=n, offset=off).reshape(dims)
        off += 8 * n
        state[name] = arr.astype(np.float64)
    if off != len(body):
        raise CheckpointError(f"{path}: trailing bytes after parameter table")
    return state
