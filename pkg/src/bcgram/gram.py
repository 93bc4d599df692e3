"""Naive and bias-corrected Gram estimators, their variances, and conversions.

All estimators start from the zero-filled product ``G = Y Y^T`` and reweight
it entrywise. For rows ``i != j`` the corrected estimate divides by
``sum_s p(i,s) p(j,s)``; on the diagonal it divides by ``sum_s p(i,s)``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import DomainError
from .matrix_io import ObservedMatrix, _frozen
from .missingness import ProbabilityModel


class EstimatorKind(enum.Enum):
    NAIVE = "naive"
    BC_HOMOGENEOUS = "bc-homogeneous"
    BC_HETEROGENEOUS = "bc-heterogeneous"


@dataclass(frozen=True, eq=False)
class GramEstimate:
    entries: np.ndarray
    kind: EstimatorKind

    def __post_init__(self):
        object.__setattr__(self, "entries", _frozen(np.asarray(self.entries, dtype=float)))

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.entries, dtype=dtype)


def as_matrix(a) -> np.ndarray:
    """Plain float array from a :class:`GramEstimate` or array-like."""
    if isinstance(a, GramEstimate):
        return np.array(a.entries)
    return np.asarray(a, dtype=float)


def check_symmetric(a, name: str = "matrix", rtol: float = 1e-12) -> np.ndarray:
    a = as_matrix(a)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DomainError(f"{name} must be square, got shape {a.shape}")
    scale = max(np.abs(a).max(), np.finfo(float).tiny)
    if np.abs(a - a.T).max() > rtol * scale:
        raise DomainError(f"{name} is not symmetric")
    return a


def check_covariance(K, psd: bool = True) -> np.ndarray:
    """Validate a ground-truth covariance matrix (symmetric, optionally PSD)."""
    K = check_symmetric(K, "covariance")
    if psd:
        w = np.linalg.eigvalsh(K)
        if w[0] < -1e-10 * max(w[-1], 0.0):
            raise DomainError(f"covariance is not positive semidefinite (min eigenvalue {w[0]:.3g})")
    return K


def _gram(m: ObservedMatrix) -> np.ndarray:
    y = m.values
    g = y @ y.T
    # BLAS may leave rounding-level asymmetry
    return (g + g.T) / 2


def naive_gram(m: ObservedMatrix) -> GramEstimate:
    """``Y Y^T / D`` with missing cells contributing zero."""
    return GramEstimate(_gram(m) / m.d_in, EstimatorKind.NAIVE)


def bc_gram_homogeneous(m: ObservedMatrix, p: float) -> GramEstimate:
    """Unbiased estimate when every cell is observed with the same probability ``p``."""
    if not 0 < p <= 1:
        raise DomainError(f"probability must satisfy 0 < p <= 1, got {p}")
    g = _gram(m)
    d = m.d_in
    out = g / (d * (p * p))
    np.fill_diagonal(out, np.diag(g) / (p * d))
    return GramEstimate(out, EstimatorKind.BC_HOMOGENEOUS)


def bc_gram_heterogeneous(m: ObservedMatrix, probs: ProbabilityModel) -> GramEstimate:
    """Unbiased estimate under cell-specific observation probabilities."""
    if probs.shape != m.values.shape:
        raise DomainError(
            f"probability model shape {probs.shape} does not match data {m.values.shape}"
        )
    pair = probs.pair_sums()
    rows = probs.row_sums()
    if np.any(pair <= 0) or np.any(rows <= 0):
        raise DomainError("some probability sums are zero; every p(i,s) must be positive")
    g = _gram(m)
    out = g / pair
    np.fill_diagonal(out, np.diag(g) / rows)
    return GramEstimate(out, EstimatorKind.BC_HETEROGENEOUS)


def moments_under_missingness(K, probs, i: int, j: int, s: int) -> tuple[float, float]:
    """Mean and variance of the single product ``y_is * y_js``.

    ``probs`` is a :class:`ProbabilityModel` or a plain N x D array.
    """
    K = as_matrix(K)
    if isinstance(probs, ProbabilityModel):
        pi, pj = probs(i, s), probs(j, s)
    else:
        probs = np.asarray(probs, dtype=float)
        pi, pj = float(probs[i, s]), float(probs[j, s])
    if i == j:
        kii = K[i, i]
        return pi * kii, kii**2 * (3 * pi - pi**2)
    pp = pi * pj
    return pp * K[i, j], pp * K[i, i] * K[j, j] + K[i, j] ** 2 * (2 * pp - pp**2)


def _check_dims(K, probs: ProbabilityModel) -> np.ndarray:
    K = check_symmetric(K, "covariance")
    if probs.shape[0] != K.shape[0]:
        raise DomainError(f"covariance is {K.shape[0]}x{K.shape[0]} but probabilities have {probs.shape[0]} rows")
    return K


def variance_exact(K, probs: ProbabilityModel) -> np.ndarray:
    """Entrywise ``Var[G~_ij]`` of the heterogeneous estimator."""
    K = _check_dims(K, probs)
    kd = np.diag(K)
    s1 = probs.pair_sums()
    s2 = probs.pair_sq_sums()
    out = (np.outer(kd, kd) * s1 + K**2 * (2 * s1 - s2)) / s1**2
    r1 = probs.row_sums()
    r2 = probs.row_sq_sums()
    np.fill_diagonal(out, kd**2 * (3 * r1 - r2) / r1**2)
    return out


def mean_pair_probability(probs: ProbabilityModel) -> np.ndarray:
    """``p_bar_ij = sum_s p(i,s) p(j,s) / D`` (N x N; diagonal uses squares)."""
    return probs.pair_sums() / probs.shape[1]


def mean_row_probability(probs: ProbabilityModel) -> np.ndarray:
    """``p_bar_i = sum_s p(i,s) / D``."""
    return probs.row_sums() / probs.shape[1]


def variance_bounds(K, probs: ProbabilityModel) -> tuple[np.ndarray, np.ndarray]:
    """Lower and upper bounds on ``Var[G~_ij]`` in terms of average probabilities."""
    K = _check_dims(K, probs)
    d = probs.shape[1]
    kd = np.diag(K)
    pbar = mean_pair_probability(probs)
    kk = np.outer(kd, kd)
    lower = (kk + K**2) / (d * pbar)
    upper = kk / (pbar * d) + (K**2 / d) * (2 / pbar - 1)
    prow = mean_row_probability(probs)
    np.fill_diagonal(lower, 2 * kd**2 / (d * prow))
    np.fill_diagonal(upper, (kd**2 / d) * (3 / prow - 1))
    return lower, upper


@dataclass(frozen=True, eq=False)
class VarianceReport:
    exact: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    p_bar_offdiag: np.ndarray
    p_bar_diag: np.ndarray

    def ordered(self, rtol: float = 1e-10) -> bool:
        """True when ``lower <= exact <= upper`` entrywise up to ``rtol``."""
        tol = rtol * np.abs(self.exact)
        return bool(np.all(self.lower <= self.exact + tol) and np.all(self.exact <= self.upper + tol))

    def to_dict(self) -> dict:
        return {
            "exact": self.exact.tolist(),
            "lower": self.lower.tolist(),
            "upper": self.upper.tolist(),
            "p_bar_offdiag": self.p_bar_offdiag.tolist(),
            "p_bar_diag": self.p_bar_diag.tolist(),
        }


def variance_report(K, probs: ProbabilityModel) -> VarianceReport:
    lower, upper = variance_bounds(K, probs)
    return VarianceReport(
        exact=variance_exact(K, probs),
        lower=lower,
        upper=upper,
        p_bar_offdiag=mean_pair_probability(probs),
        p_bar_diag=mean_row_probability(probs),
    )


def gram_to_sq_dist(G) -> np.ndarray:
    """Squared distances ``diag(G) 1^T + 1 diag(G)^T - 2 G``.

    No clamping: a bias-corrected ``G`` may give negative entries, which
    :func:`count_negative` reports.
    """
    G = check_symmetric(G, "Gram matrix", rtol=1e-10)
    dg = np.diag(G)
    e2 = dg[:, None] + dg[None, :] - 2 * G
    np.fill_diagonal(e2, 0.0)
    return e2


def count_negative(e2) -> int:
    """Number of (off-diagonal, each pair counted once) negative squared distances."""
    e2 = np.asarray(e2)
    iu = np.triu_indices(e2.shape[0], k=1)
    return int(np.sum(e2[iu] < 0))


def double_center(a) -> np.ndarray:
    """``J a J`` with ``J = I - 11^T / N``."""
    a = as_matrix(a)
    a = a - a.mean(axis=0, keepdims=True)
    a = a - a.mean(axis=1, keepdims=True)
    return (a + a.T) / 2


def sq_dist_to_gram(e2, kind: EstimatorKind = EstimatorKind.NAIVE) -> GramEstimate:
    """Classical-scaling Gram matrix ``-J E2 J / 2``.

    ``kind`` tags the result with the estimator the distances came from.
    """
    e2 = check_symmetric(e2, "squared-distance matrix", rtol=1e-10)
    scale = max(np.abs(e2).max(), np.finfo(float).tiny)
    if np.abs(np.diag(e2)).max() > 1e-12 * scale:
        raise DomainError("squared-distance matrix must have a zero diagonal")
    return GramEstimate(-0.5 * double_center(e2), kind)


def _logdet_pd(a: np.ndarray, name: str) -> float:
    w = np.linalg.eigvalsh(a)
    if w[-1] <= 0 or w[0] <= 1e-10 * w[-1]:
        raise DomainError(f"{name} is not positive definite (eigenvalues in [{w[0]:.3g}, {w[-1]:.3g}])")
    return float(np.sum(np.log(w)))


def kl_to_covariance(G, K) -> float:
    """``KL(N(0, G) || N(0, K))`` for an already scaled Gram estimate ``G``."""
    G = check_symmetric(G, "Gram estimate", rtol=1e-10)
    K = check_symmetric(K, "covariance", rtol=1e-10)
    if G.shape != K.shape:
        raise DomainError(f"shape mismatch: G {G.shape}, K {K.shape}")
    logdet_g = _logdet_pd(G, "Gram estimate G")
    logdet_k = _logdet_pd(K, "covariance K")
    trace = float(np.trace(np.linalg.solve(K, G)))
    kl = 0.5 * (logdet_k - logdet_g + trace - G.shape[0])
    return max(kl, 0.0)
