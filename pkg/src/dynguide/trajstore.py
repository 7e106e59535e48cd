"""Binary container for named arrays: sample stores and trajectory summaries.

Same file discipline as the dataset and checkpoint formats: magic, version,
little-endian layout, SHA-256 footer over everything before it.

    8 bytes   magic b"DGARRAYS"
    u32       format version (1)
    u32       array count
    per array:
        u16   name length, then UTF-8 name
        u8    dtype code, u8 ndim, then ndim * u32 dims
        raw   row-major little-endian payload
    32 bytes  SHA-256 footer
"""

from __future__ import annotations

import hashlib
import struct
from pathlib import Path

import numpy as np

MAGIC = b"DGARRAYS"
VERSION = 1

_DTYPES = ["<f8", "<f4", "<i8", "<i4", "<i2", "|u1"]
_DTYPE_CODE = {np.dtype(d): i for i, d in enumerate(_DTYPES)}


class ArrayStoreError(Exception):
    pass


def write_arrays(path, arrays: dict[str, np.ndarray]) -> None:
    chunks = [MAGIC, struct.pack("<II", VERSION, len(arrays))]
    # name-sorted so equal content gives equal bytes however the dict was built
    for name in sorted(arrays):
        arr = arrays[name]
        arr = np.ascontiguousarray(arr)
        if arr.dtype not in _DTYPE_CODE:
            arr = arr.astype("<f8")
        name_b = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(name_b)))
        chunks.append(name_b)
        chunks.append(struct.pack("<BB", _DTYPE_CODE[arr.dtype], arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.astype(arr.dtype.newbyteorder("<")).tobytes())
    body = b"".join(chunks)
    Path(path).write_bytes(body + hashlib.sha256(body).digest())


def read_arrays(path) -> dict[str, np.ndarray]:
    blob = Path(path).read_bytes()
    if len(blob) < len(MAGIC) + 8 + 32:
        raise ArrayStoreError(f"{path}: file too short")
    body, footer = blob[:-32], blob[-32:]
    if hashlib.sha256(body).digest() != footer:
        raise ArrayStoreError(f"{path}: checksum mismatch")
    if body[: len(MAGIC)] != MAGIC:
        raise ArrayStoreError(f"{path}: bad magic")
    off = len(MAGIC)
    version, count = struct.unpack_from("<II", body, off)
    off += 8
    if version != VERSION:
        raise ArrayStoreError(f"{path}: unsupported version {version}")
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", body, off)
        off += 2
        name = body[off : off + nlen].decode("utf-8")
        off += nlen
        code, ndim = struct.unpack_from("<BB", body, off)
        off += 2
        if code >= len(_DTYPES):
            raise ArrayStoreError(f"{path}: unknown dtype code {code}")
        dims = struct.unpack_from(f"<{ndim}I", body, off)
        off += 4 * ndim
        dt = np.dtype(_DTYPES[code])
        nbytes = dt.itemsize * int(np.prod(dims, dtype=np.int64)) if ndim else dt.itemsize
        raw = body[off : off + nbytes]
        if len(raw) != nbytes:
            raise ArrayStoreError(f"{path}: truncated array {name!r}")
        off += nbytes
        out[name] = np.frombuffer(raw, dtype=dt).reshape(dims).copy()
    if off != len(body):
        raise ArrayStoreError(f"{path}: trailing bytes")
    return out


__all__ = ["write_arrays", "read_arrays", "ArrayStoreError", "MAGIC", "VERSION"]
