"""Shape-image worlds: filled regular polygons on a grayscale canvas.

Rasterization is exact and deterministic: a pixel is lit iff its center lies
inside (or on) the polygon. No anti-aliasing, intensity 1.0 on 0.0 background.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..numerics.rng import Rng
from .labels import KIND_SIDES, SHAPE_KINDS, ClassLabel, mixed_label, single_label

RADIUS_RANGE = (4.0, 7.0)
MIN_GAP = 2.0
EDGE_MARGIN = 1.0
MAX_PLACE_TRIES = 60


@dataclass(frozen=True)
class ShapeInstance:
    kind: str
    cx: float
    cy: float
    radius: float
    angle: float

    def vertices(self) -> np.ndarray:
        k = KIND_SIDES[self.kind]
        angles = self.angle + 2.0 * np.pi * np.arange(k) / k
        return np.stack(
            [self.cx + self.radius * np.cos(angles), self.cy + self.radius * np.sin(angles)],
            axis=1,
        )


@dataclass
class ShapeImage:
    pixels: np.ndarray  # (H, W) float32 in [0, 1]
    shapes: list[ShapeInstance] = field(default_factory=list)
    dataset_kind: str = "single"

    def inventory(self) -> dict[str, int]:
        inv = {kind: 0 for kind in SHAPE_KINDS}
        for s in self.shapes:
            inv[s.kind] += 1
        return inv

    def label(self) -> ClassLabel:
        kinds = [s.kind for s in self.shapes]
        if self.dataset_kind == "single":
            return single_label(kinds[0])
        return mixed_label(set(kinds))


def polygon_mask(vertices: np.ndarray, height: int, width: int) -> np.ndarray:
    """Boolean mask of pixels whose centers fall inside the convex polygon."""
    v = np.asarray(vertices, dtype=np.float64)
    k = len(v)
    # orient counterclockwise so all edge cross-products share a sign
    area2 = 0.0
    for i in range(k):
        x1, y1 = v[i]
        x2, y2 = v[(i + 1) % k]
        area2 += x1 * y2 - x2 * y1
    if area2 < 0:
        v = v[::-1]
    x0 = max(int(np.floor(v[:, 0].min())), 0)
    x1 = min(int(np.ceil(v[:, 0].max())), width - 1)
    y0 = max(int(np.floor(v[:, 1].min())), 0)
    y1 = min(int(np.ceil(v[:, 1].max())), height - 1)
    mask = np.zeros((height, width), dtype=bool)
    if x1 < x0 or y1 < y0:
        return mask
    ys, xs = np.mgrid[y0 : y1 + 1, x0 : x1 + 1]
    inside = np.ones(xs.shape, dtype=bool)
    for i in range(len(v)):
        ax, ay = v[i]
        bx, by = v[(i + 1) % len(v)]
        cross = (bx - ax) * (ys - ay) - (by - ay) * (xs - ax)
        inside &= cross >= -1e-9
    mask[y0 : y1 + 1, x0 : x1 + 1] = inside
    return mask


def rasterize(shapes: list[ShapeInstance], image_size: int) -> np.ndarray:
    canvas = np.zeros((image_size, image_size), dtype=np.float32)
    for s in shapes:
        canvas[polygon_mask(s.vertices(), image_size, image_size)] = 1.0
    return canvas


def _sample_layout(kinds: list[str], image_size: int, rng: Rng) -> list[ShapeInstance] | None:
    placed: list[ShapeInstance] = []
    for kind in kinds:
        ok = False
        for _ in range(MAX_PLACE_TRIES):
            radius = float(rng.uniform(*RADIUS_RANGE))
            lo = radius + EDGE_MARGIN
            hi = image_size - 1 - radius - EDGE_MARGIN
            if hi <= lo:
                continue
            cx = float(rng.uniform(lo, hi))
            cy = float(rng.uniform(lo, hi))
            angle = float(rng.uniform(0.0, 2.0 * np.pi))
            cand = ShapeInstance(kind, cx, cy, radius, angle)
            clear = all(
                np.hypot(cand.cx - p.cx, cand.cy - p.cy) >= cand.radius + p.radius + MIN_GAP
                for p in placed
            )
            if clear:
                placed.append(cand)
                ok = True
                break
        if not ok:
            return None
    return placed


def _sample_kinds(dataset_kind: str, rng: Rng) -> list[str]:
    if dataset_kind == "single":
        kind = SHAPE_KINDS[int(rng.integers(0, 3))]
        count = int(rng.integers(1, 4))
        return [kind] * count
    if dataset_kind == "mixed":
        # uniform over the 7 nonempty subsets of the three kinds
        bits = int(rng.integers(1, 8))
        return [k for i, k in enumerate(SHAPE_KINDS) if bits >> i & 1]
    raise ValueError(f"unknown dataset kind: {dataset_kind}")


def _detector_round_trips(img: ShapeImage) -> bool:
    from ..halleval import detect_shapes  # deferred: halleval imports this module

    found = detect_shapes(img.pixels)
    truth = img.inventory()
    return found.get("unknown", 0) == 0 and all(
        found[k] == truth[k] for k in SHAPE_KINDS
    )


def generate_shapes(
    kind: str, n: int, image_size: int, rng: Rng, verify_detectable: bool = True
) -> tuple[list[ShapeImage], list[ClassLabel]]:
    """Generate n images of the given world with their class labels.

    Kinds are drawn once per image and kept through layout retries, so
    placement failures and detectability rejections cannot skew the label
    distribution. With ``verify_detectable`` every emitted image round-trips
    through the shape detector; a small set of layouts rasterize to pixel
    sets that two different polygons produce exactly (no detector can split
    those), and they are resampled away here.
    """
    images: list[ShapeImage] = []
    labels: list[ClassLabel] = []
    for _ in range(n):
        kinds = _sample_kinds(kind, rng)
        while True:
            layout = _sample_layout(kinds, image_size, rng)
            if layout is None:
                continue  # same kinds, fresh layout
            img = ShapeImage(rasterize(layout, image_size), layout, kind)
            if verify_detectable and not _detector_round_trips(img):
                continue
            break
        images.append(img)
        labels.append(img.label())
    return images, labels


__all__ = [
    "ShapeInstance",
    "ShapeImage",
    "polygon_mask",
    "rasterize",
    "generate_shapes",
    "RADIUS_RANGE",
    "MIN_GAP",
]
