"""k-means with k-means++ restarts and normalised spectral clustering."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .errors import DegenerateClusteringError, DomainError


def canonical_labels(labels) -> np.ndarray:
    """Relabel to contiguous integers ``0..k-1`` in order of first appearance."""
    labels = np.asarray(labels).ravel()
    _, first, inverse = np.unique(labels, return_index=True, return_inverse=True)
    rank = np.empty(first.size, dtype=np.int64)
    rank[np.argsort(first)] = np.arange(first.size)
    return rank[inverse]


@dataclass(frozen=True, eq=False)
class KMeansResult:
    labels: np.ndarray
    centers: np.ndarray
    inertia: float
    run_inertias: np.ndarray
    """Inertia of every restart, in the order they were run."""


def _plusplus(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    centers = np.empty((k, x.shape[1]))
    centers[0] = x[rng.integers(n)]
    d2 = np.sum((x - centers[0]) ** 2, axis=1)
    for c in range(1, k):
        total = d2.sum()
        if total <= 0:
            raise DegenerateClusteringError(f"fewer than {k} distinct points")
        idx = rng.choice(n, p=d2 / total)
        centers[c] = x[idx]
        d2 = np.minimum(d2, np.sum((x - centers[c]) ** 2, axis=1))
    return centers


def _lloyd(x, centers, max_iter=300):
    k = centers.shape[0]
    labels = None
    for _ in range(max_iter):
        dist = cdist(x, centers, "sqeuclidean")
        new = np.argmin(dist, axis=1)
        counts = np.bincount(new, minlength=k)
        for c in np.flatnonzero(counts == 0):
            # move an empty centre onto the point worst served by its centre
            far = int(np.argmax(dist[np.arange(x.shape[0]), new]))
            new[far] = c
            dist[far, :] = 0.0
            counts = np.bincount(new, minlength=k)
        if np.any(counts == 0):
            raise DegenerateClusteringError("could not keep every cluster non-empty")
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        for c in range(k):
            centers[c] = x[labels == c].mean(axis=0)
    inertia = float(np.sum((x - centers[labels]) ** 2))
    return labels, centers, inertia


def kmeans_fit(points, k: int, restarts: int = 30, seed=0, max_iter: int = 300) -> KMeansResult:
    """Best of ``restarts`` Lloyd runs (k-means++ seeding) by inertia."""
    x = np.asarray(points, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    n = x.shape[0]
    if k < 1 or k > n:
        raise DomainError(f"cluster count must satisfy 1 <= k <= N={n}, got {k}")
    if restarts < 1:
        raise DomainError("need at least one restart")
    rng = np.random.default_rng(seed)
    best = None
    inertias = []
    for _ in range(restarts):
        labels, centers, inertia = _lloyd(x, _plusplus(x, k, rng), max_iter)
        inertias.append(inertia)
        if best is None or inertia < best[2]:
            best = (labels, centers, inertia)
    return KMeansResult(
        labels=best[0], centers=best[1], inertia=best[2], run_inertias=np.array(inertias)
    )


def kmeans(points, k: int, restarts: int = 30, seed=0) -> np.ndarray:
    """Best-of-``restarts`` labels, numbered in order of first appearance."""
    return canonical_labels(kmeans_fit(points, k, restarts=restarts, seed=seed).labels)


def inertia(points, labels) -> float:
    x = np.asarray(points, dtype=float)
    labels = np.asarray(labels)
    return float(
        sum(np.sum((x[labels == c] - x[labels == c].mean(axis=0)) ** 2) for c in np.unique(labels))
    )


def rbf_bandwidth(points, neighbor: int = 7) -> float:
    """Mean distance from each point to its ``neighbor``-th nearest other point."""
    x = np.asarray(points, dtype=float)
    d = cdist(x, x)
    d.sort(axis=1)
    return float(d[:, neighbor].mean())


def spectral_clustering(points, k: int, seed=0, restarts: int = 10, neighbor: int = 7) -> np.ndarray:
    """Normalised spectral clustering on a dense RBF affinity.

    Affinity ``exp(-|xi - xj|^2 / (2 sigma^2))`` with ``sigma`` the mean
    distance to the 7th nearest neighbour. The top-k eigenvectors of
    ``D^-1/2 W D^-1/2`` (the bottom of the normalised Laplacian) are
    row-normalised and clustered with :func:`kmeans`.
    """
    x = np.asarray(points, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    n = x.shape[0]
    if n <= neighbor:
        raise DomainError(f"spectral clustering needs more than {neighbor} points, got {n}")
    if k < 1 or k > n:
        raise DomainError(f"cluster count must satisfy 1 <= k <= N={n}, got {k}")
    if k == 1:
        return np.zeros(n, dtype=np.int64)
    sigma = rbf_bandwidth(x, neighbor)
    if sigma <= 0:
        raise DegenerateClusteringError("kernel bandwidth is zero (too many duplicate points)")
    w = np.exp(-cdist(x, x, "sqeuclidean") / (2 * sigma**2))
    np.fill_diagonal(w, 0.0)
    deg = w.sum(axis=1)
    if np.any(deg <= 0):
        raise DegenerateClusteringError("isolated point in affinity graph")
    inv = 1 / np.sqrt(deg)
    a = inv[:, None] * w * inv[None, :]
    _, vecs = np.linalg.eigh((a + a.T) / 2)
    emb = vecs[:, -k:]
    norms = np.linalg.norm(emb, axis=1, keepdims=True)
    emb = emb / np.where(norms > 0, norms, 1.0)
    return kmeans(emb, k, restarts=restarts, seed=seed)
