"""The 25-Gaussian grid world: sampling, clustering, and point-file IO."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from ..numerics.rng import Rng

GRID_VALUES = (-2.0, -1.0, 0.0, 1.0, 2.0)
DEFAULT_SIGMA = 0.05
# divide data coordinates by this to land comfortably inside [-1, 1] for training
DATA_SCALE = 2.5


def _grid_centers() -> np.ndarray:
    xs, ys = np.meshgrid(GRID_VALUES, GRID_VALUES)
    return np.stack([xs.ravel(), ys.ravel()], axis=1)


@dataclass
class GmmSpec:
    centers: np.ndarray = field(default_factory=_grid_centers)
    sigma: float = DEFAULT_SIGMA
    weights: np.ndarray | None = None

    def __post_init__(self):
        self.centers = np.asarray(self.centers, dtype=np.float64)
        if self.centers.ndim != 2 or self.centers.shape[1] != 2:
            raise ValueError(f"centers must be (k, 2), got {self.centers.shape}")
        k = len(self.centers)
        if self.weights is None:
            self.weights = np.full(k, 1.0 / k)
        else:
            self.weights = np.asarray(self.weights, dtype=np.float64)
            if self.weights.shape != (k,) or np.any(self.weights < 0):
                raise ValueError("weights must be nonnegative, one per center")
            total = self.weights.sum()
            if not np.isclose(total, 1.0, atol=1e-9):
                raise ValueError(f"weights must sum to 1, got {total}")

    @property
    def k(self) -> int:
        return len(self.centers)

    def scaled(self, factor: float = 1.0 / DATA_SCALE) -> "GmmSpec":
        """Same mixture expressed in rescaled coordinates (x -> factor*x)."""
        return GmmSpec(self.centers * factor, self.sigma * factor, self.weights.copy())


def sample_gmm(spec: GmmSpec, n: int, rng: Rng) -> tuple[np.ndarray, np.ndarray]:
    """Draw n points; returns (points (n,2), true component indices (n,))."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    comps = rng.choice(spec.k, size=n, p=spec.weights)
    noise = rng.normal((n, 2))
    points = spec.centers[comps] + spec.sigma * noise
    return points, comps


def _pairwise_sq(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    return (
        (points**2).sum(axis=1)[:, None]
        - 2.0 * points @ centroids.T
        + (centroids**2).sum(axis=1)[None, :]
    )


def kmeans(
    points: np.ndarray, k: int, rng: Rng, max_iters: int = 100
) -> tuple[np.ndarray, np.ndarray]:
    """Lloyd iterations with greedy farthest-point seeding.

    Returns (assignment (n,), centroids (k,2)). Empty clusters are reseeded
    from the point farthest from its own centroid; ties resolve to the lowest
    point index so runs are reproducible.
    """
    points = np.asarray(points, dtype=np.float64)
    n = len(points)
    if n < k:
        raise ValueError(f"need at least k={k} points, got {n}")
    centroids = np.empty((k, 2))
    first = int(rng.integers(0, n))
    centroids[0] = points[first]
    min_d2 = ((points - centroids[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        idx = int(np.argmax(min_d2))  # argmax takes the lowest index on ties
        centroids[j] = points[idx]
        d2 = ((points - centroids[j]) ** 2).sum(axis=1)
        min_d2 = np.minimum(min_d2, d2)

    assign = np.full(n, -1, dtype=np.int64)
    for _ in range(max_iters):
        d2 = _pairwise_sq(points, centroids)
        new_assign = np.argmin(d2, axis=1)
        own_d2 = d2[np.arange(n), new_assign]
        for j in range(k):
            if not np.any(new_assign == j):
                far = int(np.argmax(own_d2))
                centroids[j] = points[far]
                new_assign[far] = j
                own_d2[far] = 0.0
        if np.array_equal(new_assign, assign):
            break
        assign = new_assign
        for j in range(k):
            members = points[assign == j]
            if len(members):
                centroids[j] = members.mean(axis=0)
    return assign, centroids


def cluster_labels(
    points: np.ndarray, k: int, rng: Rng
) -> tuple[np.ndarray, np.ndarray]:
    """Cluster points into k classes; returns (label indices, centroids).

    Cluster ids are canonicalized by sorting centroids row-major (y, then x)
    so the same point cloud always yields the same labeling regardless of
    seeding order.
    """
    assign, centroids = kmeans(points, k, rng)
    order = np.lexsort((centroids[:, 0], centroids[:, 1]))
    remap = np.empty(k, dtype=np.int64)
    remap[order] = np.arange(k)
    return remap[assign], centroids[order]


def write_points_csv(path, points: np.ndarray, components: np.ndarray, clusters: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x", "y", "component", "cluster_label"])
        for (x, y), comp, cl in zip(points, components, clusters):
            writer.writerow([repr(float(x)), repr(float(y)), int(comp), int(cl)])


def read_points_csv(path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    rows = list(csv.reader(open(path, newline="")))
    if rows[0] != ["x", "y", "component", "cluster_label"]:
        raise ValueError(f"{path}: unexpected point-file header {rows[0]}")
    data = np.array([[float(r[0]), float(r[1])] for r in rows[1:]])
    comps = np.array([int(r[2]) for r in rows[1:]], dtype=np.int64)
    clusters = np.array([int(r[3]) for r in rows[1:]], dtype=np.int64)
    return data, comps, clusters


__all__ = [
    "GmmSpec",
    "sample_gmm",
    "kmeans",
    "cluster_labels",
    "write_points_csv",
    "read_points_csv",
    "DATA_SCALE",
]
