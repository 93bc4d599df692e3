"""Spectral dimension reduction from a Gram estimate."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import pdist, squareform

from .errors import DomainError
from .gram import check_symmetric, double_center

log = logging.getLogger(__name__)

AUTO = "auto"


@dataclass(frozen=True, eq=False)
class Embedding:
    """Principal coordinates and the eigenvalues they were built from.

    ``coords[:, l] = sqrt(eigenvalues[l]) * u_l``; ``dropped_negative`` counts
    negative eigenvalues of the (centred) Gram matrix, which are never used.
    ``spectrum`` holds the full eigenvalue list in nonincreasing order.
    """

    coords: np.ndarray
    eigenvalues: np.ndarray
    dropped_negative: int
    spectrum: np.ndarray

    @property
    def dims(self) -> int:
        return self.coords.shape[1]


def _fix_signs(u: np.ndarray) -> np.ndarray:
    # Largest-magnitude entry of each eigenvector made positive (first on ties).
    idx = np.argmax(np.abs(u), axis=0)
    signs = np.sign(u[idx, np.arange(u.shape[1])])
    signs[signs == 0] = 1.0
    return u * signs


def cng_scree(eigenvalues) -> int:
    """Cattell-Nelson-Gorsuch scree test.

    For each candidate index ``k`` (0-based, ``2 <= k <= n - 3``) fit
    least-squares lines through ``eigenvalues[k-2:k+1]`` and
    ``eigenvalues[k:k+3]`` and pick the ``k`` where the right slope exceeds
    the left slope the most. ``k`` is also the number of components before
    the elbow. Ties go to the smaller ``k``; fewer than 6 eigenvalues fall
    back to 2.
    """
    ev = np.asarray(eigenvalues, dtype=float).ravel()
    if ev.size < 6:
        log.warning("scree test needs at least 6 eigenvalues, got %d; using 2", ev.size)
        return 2
    x = np.arange(3.0)
    xc = x - x.mean()

    def slope(y):
        return float(np.dot(xc, y - y.mean()) / np.dot(xc, xc))

    best_k, best = 2, -np.inf
    for k in range(2, ev.size - 2):
        diff = slope(ev[k : k + 3]) - slope(ev[k - 2 : k + 1])
        if diff > best:
            best_k, best = k, diff
    return best_k


def pca_from_gram(G, d=2, center: bool = True) -> Embedding:
    """PCA coordinates from a Gram matrix.

    ``d`` is a target dimension or ``"auto"`` (CNG scree test on the
    positive eigenvalues). Only eigenpairs with positive eigenvalues are
    kept, so the returned dimension may be smaller than ``d``.
    """
    G = check_symmetric(G, "Gram matrix", rtol=1e-10)
    n = G.shape[0]
    if d != AUTO:
        d = int(d)
        if d < 1 or d > n:
            raise DomainError(f"target dimension must be in [1, {n}], got {d}")
    a = double_center(G) if center else (G + G.T) / 2
    w, u = np.linalg.eigh(a)
    order = np.argsort(w)[::-1]
    w, u = w[order], u[:, order]
    n_pos = int(np.sum(w > 0))
    n_neg = int(np.sum(w < 0))
    if d == AUTO:
        d = cng_scree(w[:n_pos])
    keep = min(d, n_pos)
    if keep < d:
        log.info("only %d positive eigenvalues; embedding in %d dimensions instead of %d", n_pos, keep, d)
    u = _fix_signs(u[:, :keep])
    lam = w[:keep]
    return Embedding(
        coords=u * np.sqrt(lam),
        eigenvalues=lam,
        dropped_negative=n_neg,
        spectrum=w,
    )


def pc_space_distances(G, center: bool = True) -> np.ndarray:
    """Euclidean distances between points embedded with every positive eigenpair."""
    G = check_symmetric(G, "Gram matrix", rtol=1e-10)
    emb = pca_from_gram(G, d=G.shape[0], center=center)
    if emb.dims == 0:
        return np.zeros_like(G)
    return squareform(pdist(emb.coords))
