"""Class-label vocabularies for the three data worlds."""

from __future__ import annotations

from dataclasses import dataclass

SHAPE_KINDS = ("triangle", "square", "pentagon")
KIND_SIDES = {"triangle": 3, "square": 4, "pentagon": 5}

SINGLE_NAMES = ("T", "S", "P")
# canonical order: singles, pairs, then the full set
MIXED_NAMES = ("T", "S", "P", "TS", "TP", "SP", "TSP")

_NAME_TO_BITS = {
    "T": 0b001,
    "S": 0b010,
    "P": 0b100,
    "TS": 0b011,
    "TP": 0b101,
    "SP": 0b110,
    "TSP": 0b111,
}
_BITS_TO_MIXED_INDEX = {bits: MIXED_NAMES.index(n) for n, bits in _NAME_TO_BITS.items()}


@dataclass(frozen=True)
class ClassLabel:
    index: int
    name: str


def gmm_label(index: int) -> ClassLabel:
    if not 0 <= index < 25:
        raise ValueError(f"gmm class index out of range: {index}")
    return ClassLabel(index, f"g{index:02d}")


def single_label(kind: str) -> ClassLabel:
    idx = SHAPE_KINDS.index(kind)
    return ClassLabel(idx, SINGLE_NAMES[idx])


def mixed_label(kinds_present) -> ClassLabel:
    bits = 0
    for kind in kinds_present:
        bits |= 1 << SHAPE_KINDS.index(kind)
    if bits == 0:
        raise ValueError("mixed label needs at least one shape kind")
    idx = _BITS_TO_MIXED_INDEX[bits]
    return ClassLabel(idx, MIXED_NAMES[idx])


def class_count(world: str) -> int:
    return {"gmm": 25, "single": 3, "mixed": 7}[world]
