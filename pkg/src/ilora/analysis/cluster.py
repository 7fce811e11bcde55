from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.cluster.hierarchy import leaves_list, linkage


class ParameterError(ValueError):
    pass


@dataclass
class ClusterAssignment:
    labels: np.ndarray  # (n,) cluster id per sequence
    centroids: np.ndarray  # (C, d)
    display_order: list[int]  # clusters ordered so that close centroids sit together

    @property
    def n_clusters(self) -> int:
        return self.centroids.shape[0]

    def members(self, c: int) -> np.ndarray:
        return np.nonzero(self.labels == c)[0]


def _kmeans_pp(x: np.ndarray, C: int, rng: np.random.Generator) -> np.ndarray:
    centers = [x[rng.integers(len(x))]]
    d2 = ((x - centers[0]) ** 2).sum(axis=1)
    for _ in range(1, C):
        total = d2.sum()
        if total <= 0:
            idx = rng.integers(len(x))
        else:
            idx = rng.choice(len(x), p=d2 / total)
        centers.append(x[idx])
        d2 = np.minimum(d2, ((x - x[idx]) ** 2).sum(axis=1))
    return np.array(centers)


def kmeans(x: np.ndarray, C: int, rng: np.random.Generator, max_iter: int = 100,
           tol: float = 1e-6) -> tuple[np.ndarray, np.ndarray]:
    """Lloyd iterations from k-means++ seeds; stops when no centroid moves more than ``tol``."""
    centers = _kmeans_pp(x, C, rng)
    labels = np.zeros(len(x), dtype=np.int64)
    for _ in range(max_iter):
        dist = ((x[:, None, :] - centers[None]) ** 2).sum(axis=-1)
        labels = dist.argmin(axis=1)
        new = centers.copy()
        for c in range(C):
            pts = x[labels == c]
            if len(pts):
                new[c] = pts.mean(axis=0)
        shift = np.sqrt(((new - centers) ** 2).sum(axis=1)).max()
        centers = new
        if shift < tol:
            break
    dist = ((x[:, None, :] - centers[None]) ** 2).sum(axis=-1)
    return dist.argmin(axis=1), centers


def cluster_sequences(embeddings, C: int, rng: np.random.Generator) -> ClusterAssignment:
    """Euclidean k-means on sequence embeddings, clusters reordered by average linkage."""
    x = np.stack([getattr(e, "vec", e) for e in embeddings]).astype(np.float64)
    if not 1 <= C <= len(x):
        raise ParameterError(f"cluster count {C} must be in 1..{len(x)}")
    labels, centers = kmeans(x, C, rng)
    order = [0] if C == 1 else [int(i) for i in leaves_list(linkage(centers, method="average"))]
    return ClusterAssignment(labels, centers, order)


def purity(labels: np.ndarray, truth: np.ndarray) -> float:
    """Fraction of points whose cluster's majority class matches their own."""
    labels, truth = np.asarray(labels), np.asarray(truth)
    total = 0
    for c in np.unique(labels):
        _, counts = np.unique(truth[labels == c], return_counts=True)
        total += counts.max()
    return total / len(labels)
