"""Binary on-disk format for shape-image datasets.

Layout: header (magic, version, kind, count, H, W), one record per item
(label index u16, per-kind inventory 3x u16, unknown u16, raw float32
little-endian pixel block), SHA-256 checksum footer over everything before it.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass

import numpy as np

from .labels import MIXED_NAMES, SHAPE_KINDS, SINGLE_NAMES, ClassLabel

MAGIC = b"DGSHDATA"
VERSION = 1
_KIND_CODES = {"single": 0, "mixed": 1}
_CODE_KINDS = {v: k for k, v in _KIND_CODES.items()}


class DatasetFormatError(Exception):
    pass


@dataclass
class DatasetItem:
    pixels: np.ndarray  # (H, W) float32 in [0, 1]
    label: ClassLabel
    inventory: dict[str, int]


@dataclass
class ShapesDataset:
    kind: str  # single | mixed
    image_size: int
    items: list[DatasetItem]

    def pixel_array(self) -> np.ndarray:
        return np.stack([it.pixels for it in self.items])

    def label_indices(self) -> np.ndarray:
        return np.array([it.label.index for it in self.items], dtype=np.int64)


def _label_for(kind: str, index: int) -> ClassLabel:
    names = SINGLE_NAMES if kind == "single" else MIXED_NAMES
    if not 0 <= index < len(names):
        raise DatasetFormatError(f"label index {index} out of range for kind '{kind}'")
    return ClassLabel(index, names[index])


def as_dataset(images, labels, kind: str) -> ShapesDataset:
    """Package generator output (ShapeImage + ClassLabel lists) for storage."""
    items = [
        DatasetItem(np.asarray(img.pixels, dtype=np.float32), lab, img.inventory())
        for img, lab in zip(images, labels)
    ]
    size = items[0].pixels.shape[0] if items else 0
    return ShapesDataset(kind, size, items)


def write_dataset(path, dataset: ShapesDataset) -> None:
    if dataset.kind not in _KIND_CODES:
        raise DatasetFormatError(f"unknown dataset kind: {dataset.kind}")
    h = dataset.image_size
    chunks = [
        MAGIC,
        struct.pack(
            "<HBIHH", VERSION, _KIND_CODES[dataset.kind], len(dataset.items), h, h
        ),
    ]
    for it in dataset.items:
        px = np.asarray(it.pixels, dtype="<f4")
        if px.shape != (h, h):
            raise DatasetFormatError(f"pixel block shape {px.shape} != ({h}, {h})")
        inv = [it.inventory.get(k, 0) for k in SHAPE_KINDS]
        unknown = it.inventory.get("unknown", 0)
        chunks.append(struct.pack("<HHHHH", it.label.index, *inv, unknown))
        chunks.append(px.tobytes())
    body = b"".join(chunks)
    digest = hashlib.sha256(body).digest()
    with open(path, "wb") as f:
        f.write(body)
        f.write(digest)


def read_dataset(path) -> ShapesDataset:
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < len(MAGIC) + 11 + 32:
        raise DatasetFormatError("file too short to be a dataset")
    body, digest = blob[:-32], blob[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise DatasetFormatError("checksum mismatch")
    if body[: len(MAGIC)] != MAGIC:
        raise DatasetFormatError("bad magic")
    off = len(MAGIC)
    version, kind_code, count, h, w = struct.unpack_from("<HBIHH", body, off)
    off += 11
    if version != VERSION:
        raise DatasetFormatError(f"unknown version: {version}")
    if kind_code not in _CODE_KINDS:
        raise DatasetFormatError(f"unknown kind code: {kind_code}")
    kind = _CODE_KINDS[kind_code]
    items: list[DatasetItem] = []
    px_bytes = h * w * 4
    for _ in range(count):
        if off + 10 + px_bytes > len(body):
            raise DatasetFormatError("truncated record")
        label_idx, nt, ns, np_, unknown = struct.unpack_from("<HHHHH", body, off)
        off += 10
        px = np.frombuffer(body, dtype="<f4", count=h * w, offset=off).reshape(h, w)
        off += px_bytes
        inv = dict(zip(SHAPE_KINDS, (nt, ns, np_)))
        if unknown:
            inv["unknown"] = unknown
        items.append(DatasetItem(px.astype(np.float32), _label_for(kind, label_idx), inv))
    if off != len(body):
        raise DatasetFormatError("trailing bytes after last record")
    return ShapesDataset(kind, h, items)


__all__ = [
    "DatasetFormatError",
    "DatasetItem",
    "ShapesDataset",
    "as_dataset",
    "write_dataset",
    "read_dataset",
]
