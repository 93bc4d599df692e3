"""Ensemble inference of dropout positions in expression-like matrices.

Each run clusters the samples, then calls a zero at ``(i, s)`` true
non-expression when at least ``threshold`` of the samples in ``i``'s cluster
are also zero in feature ``s``; otherwise it is a dropout. Runs vote, and a
zero is kept as non-expression only on a strict majority, so ties become
dropouts.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from ._rng import derive_seed
from .clustering import kmeans, spectral_clustering
from .errors import ConfigError, DegenerateClusteringError

log = logging.getLogger(__name__)

CLUSTERERS = ("kmeans", "spectral")


@dataclass(frozen=True)
class EnsembleConfig:
    clusterers: tuple[str, ...] = CLUSTERERS
    ks: tuple[int, ...] = (4, 6, 8, 10, 12)
    threshold: float = 0.85
    kmeans_restarts: int = 10
    retries: int = 5
    seed: int = 0

    def __post_init__(self):
        unknown = set(self.clusterers) - set(CLUSTERERS)
        if unknown:
            raise ConfigError(f"unknown clusterer(s) {sorted(unknown)}; choose from {CLUSTERERS}")
        if not self.clusterers or not self.ks:
            raise ConfigError("need at least one clusterer and one cluster count")
        if not 0.5 <= self.threshold <= 0.99:
            raise ConfigError(f"threshold must lie in [0.5, 0.99], got {self.threshold}")
        if any(k < 1 for k in self.ks):
            raise ConfigError("cluster counts must be positive")

    @property
    def runs(self) -> list[tuple[str, int]]:
        return [(c, k) for c in self.clusterers for k in self.ks]


@dataclass(frozen=True, eq=False)
class DropoutCall:
    """``mask`` is 1 for observed values and true zeros, 0 for inferred dropouts.

    ``votes[i, s]`` counts the runs that called ``(i, s)`` a dropout.
    """

    mask: np.ndarray
    votes: np.ndarray
    ensemble_size: int


def nonexpression_indicator(data, labels, threshold: float) -> np.ndarray:
    """One run's call: True where a zero cell counts as true non-expression."""
    zero = np.asarray(data) == 0
    labels = np.asarray(labels)
    out = np.zeros_like(zero)
    for c in np.unique(labels):
        rows = labels == c
        frac = zero[rows].mean(axis=0)
        out[rows] = zero[rows] & (frac >= threshold)[None, :]
    return out


def _cluster(data, name, k, seed, restarts):
    if name == "kmeans":
        return kmeans(data, k, restarts=restarts, seed=seed)
    return spectral_clustering(data, k, seed=seed, restarts=restarts)


def infer_dropouts(data, config: EnsembleConfig = EnsembleConfig()) -> DropoutCall:
    """Vote over ``clusterers x ks`` runs on log-scale, nonnegative ``data``."""
    data = np.asarray(data, dtype=float)
    n = data.shape[0]
    bad = [k for k in config.ks if k >= n]
    if bad:
        raise ConfigError(f"cluster counts {bad} must be smaller than the number of samples ({n})")
    runs = config.runs
    dropout_votes = np.zeros(data.shape, dtype=np.int64)
    zero = data == 0
    for r, (name, k) in enumerate(runs):
        for attempt in range(config.retries + 1):
            seed = derive_seed(config.seed, r, attempt)
            try:
                labels = _cluster(data, name, k, seed, config.kmeans_restarts)
                break
            except DegenerateClusteringError as exc:
                log.info("%s k=%d attempt %d degenerate: %s", name, k, attempt, exc)
        else:
            raise DegenerateClusteringError(
                f"{name} with k={k} stayed degenerate after {config.retries + 1} attempts"
            )
        nonexpr = nonexpression_indicator(data, labels, config.threshold)
        dropout_votes += zero & ~nonexpr
    size = len(runs)
    # keep as true zero only if more than half the runs said non-expression
    nonexpr_votes = np.where(zero, size - dropout_votes, 0)
    observed = ~zero | (2 * nonexpr_votes > size)
    return DropoutCall(mask=observed.astype(np.int8), votes=dropout_votes, ensemble_size=size)
