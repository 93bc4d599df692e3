"""Missingness mechanisms and estimation of non-missingness probabilities."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, EstimationError
from .matrix_io import ObservedMatrix, _frozen

# Slack for products of estimated rank-1 factors that land a few ulps above 1.
_ULP_SLACK = 1e-12


@dataclass(frozen=True, eq=False)
class ProbabilityModel:
    """Per-cell probabilities ``p(i, s)`` that cell ``(i, s)`` is observed.

    Either a rank-1 model ``p(i, s) = cell[i] * feature[s]`` or a full
    N x D matrix. Rank-1 factors are only identified up to a common scalar,
    so compare models through :meth:`matrix`, never through the factors.
    """

    cell: np.ndarray | None = None
    feature: np.ndarray | None = None
    full: np.ndarray | None = None
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if self.full is not None:
            if self.cell is not None or self.feature is not None:
                raise DomainError("give either rank-1 factors or a full matrix, not both")
            full = np.asarray(self.full, dtype=float)
            if full.ndim != 2:
                raise DomainError("full probability matrix must be 2-D")
            object.__setattr__(self, "full", _frozen(full))
            p = full
        else:
            if self.cell is None or self.feature is None:
                raise DomainError("rank-1 model needs both cell and feature factors")
            c = np.asarray(self.cell, dtype=float).ravel()
            g = np.asarray(self.feature, dtype=float).ravel()
            if np.any(c <= 0) or np.any(g <= 0):
                raise DomainError("rank-1 factors must be positive")
            object.__setattr__(self, "cell", _frozen(c))
            object.__setattr__(self, "feature", _frozen(g))
            p = np.outer(c, g)
        if not np.all(np.isfinite(p)) or np.any(p <= 0) or np.any(p > 1 + _ULP_SLACK):
            raise DomainError("every probability must lie in (0, 1]")

    @classmethod
    def rank1(cls, cell, feature) -> "ProbabilityModel":
        return cls(cell=cell, feature=feature)

    @classmethod
    def from_matrix(cls, p) -> "ProbabilityModel":
        return cls(full=p)

    @classmethod
    def constant(cls, p: float, n: int, d: int) -> "ProbabilityModel":
        """Homogeneous model, stored as rank-1 so sums reduce exactly to ``d * p * p``."""
        if not 0 < p <= 1:
            raise DomainError(f"probability must satisfy 0 < p <= 1, got {p}")
        return cls(cell=np.full(n, float(p)), feature=np.ones(d))

    @property
    def is_rank1(self) -> bool:
        return self.full is None

    @property
    def shape(self) -> tuple[int, int]:
        if self.full is not None:
            return self.full.shape
        return (self.cell.size, self.feature.size)

    def __call__(self, i: int, s: int) -> float:
        if self.full is not None:
            return float(self.full[i, s])
        return min(float(self.cell[i] * self.feature[s]), 1.0)

    def matrix(self) -> np.ndarray:
        if self.full is not None:
            return np.array(self.full)
        return np.minimum(np.outer(self.cell, self.feature), 1.0)

    def columns(self, idx) -> "ProbabilityModel":
        if self.full is not None:
            return ProbabilityModel(full=self.full[:, idx])
        return ProbabilityModel(cell=self.cell, feature=self.feature[idx])

    def pair_sums(self) -> np.ndarray:
        """N x N matrix of ``sum_s p(i,s) p(j,s)``."""
        if "pair" not in self._cache:
            if self.full is not None:
                s = self.full @ self.full.T
            else:
                s = np.outer(self.cell, self.cell) * np.dot(self.feature, self.feature)
            self._cache["pair"] = s
        return self._cache["pair"]

    def row_sums(self) -> np.ndarray:
        """Length-N vector of ``sum_s p(i,s)``."""
        if "row" not in self._cache:
            if self.full is not None:
                s = self.full.sum(axis=1)
            else:
                s = self.cell * self.feature.sum()
            self._cache["row"] = s
        return self._cache["row"]

    def pair_sq_sums(self) -> np.ndarray:
        """N x N matrix of ``sum_s (p(i,s) p(j,s))**2``."""
        if self.full is not None:
            sq = self.full**2
            return sq @ sq.T
        return np.outer(self.cell**2, self.cell**2) * np.sum(self.feature**4)

    def row_sq_sums(self) -> np.ndarray:
        if self.full is not None:
            return np.sum(self.full**2, axis=1)
        return self.cell**2 * np.sum(self.feature**2)


@dataclass(frozen=True)
class MechanismSpec:
    """How to hide cells of a complete matrix.

    ``kind="mcar"`` keeps every cell with probability ``p``.
    ``kind="rank1"`` hides cell ``(i, s)`` with probability ``b[i] * q[s]``
    where ``b ~ U[b_low, b_high]`` and ``q ~ U[q_low, q_high]`` are drawn once.
    """

    kind: str
    p: float = 1.0
    b_low: float = 0.4
    b_high: float = 0.6
    q_low: float = 0.7
    q_high: float = 0.9
    seed: int = 0

    def __post_init__(self):
        if self.kind == "mcar":
            if not 0 < self.p <= 1:
                raise DomainError(f"MCAR probability must satisfy 0 < p <= 1, got {self.p}")
        elif self.kind == "rank1":
            if not 0 <= self.b_low <= self.b_high <= 1:
                raise DomainError("need 0 <= b_low <= b_high <= 1")
            if not 0 <= self.q_low <= self.q_high <= 1:
                raise DomainError("need 0 <= q_low <= q_high <= 1")
            if self.b_high * self.q_high >= 1:
                # p(i,s) = 1 - b q must stay positive
                raise DomainError("b_high * q_high must be < 1 so every cell can be observed")
        else:
            raise DomainError(f"unknown mechanism kind {self.kind!r}")

    @classmethod
    def mcar(cls, p: float, seed: int = 0) -> "MechanismSpec":
        return cls("mcar", p=p, seed=seed)

    @classmethod
    def heterogeneous(cls, b_low=0.4, b_high=0.6, q_low=0.7, q_high=0.9, seed: int = 0):
        return cls("rank1", b_low=b_low, b_high=b_high, q_low=q_low, q_high=q_high, seed=seed)

    @classmethod
    def parse(cls, text: str, seed: int = 0) -> "MechanismSpec":
        """Parse ``mcar:P`` or ``rank1:b_low,b_high,q_low,q_high``."""
        kind, _, args = text.partition(":")
        try:
            nums = [float(x) for x in args.split(",")] if args else []
        except ValueError:
            raise DomainError(f"bad mechanism arguments in {text!r}") from None
        if kind == "mcar" and len(nums) == 1:
            return cls.mcar(nums[0], seed=seed)
        if kind == "rank1" and len(nums) == 4:
            return cls.heterogeneous(*nums, seed=seed)
        raise DomainError(
            f"mechanism must be 'mcar:p' or 'rank1:b_low,b_high,q_low,q_high', got {text!r}"
        )

    def probabilities(self, n: int, d: int, rng: np.random.Generator) -> ProbabilityModel:
        if self.kind == "mcar":
            return ProbabilityModel.constant(self.p, n, d)
        b = rng.uniform(self.b_low, self.b_high, size=n)
        q = rng.uniform(self.q_low, self.q_high, size=d)
        return ProbabilityModel.from_matrix(1.0 - np.outer(b, q))


def sample_mask(probs: ProbabilityModel, rng: np.random.Generator) -> np.ndarray:
    """One Bernoulli draw per cell, 1 with probability ``p(i, s)``."""
    return (rng.random(probs.shape) < probs.matrix()).astype(np.int8)


def apply_missingness(complete, spec: MechanismSpec) -> tuple[ObservedMatrix, ProbabilityModel]:
    """Hide cells of ``complete`` according to ``spec``.

    Returns the observed matrix and the true probability model that
    generated its mask. Output depends only on ``spec`` (including its seed).
    """
    complete = np.asarray(complete, dtype=float)
    if complete.ndim != 2:
        raise DomainError("complete data must be a 2-D matrix")
    rng = np.random.default_rng(spec.seed)
    probs = spec.probabilities(*complete.shape, rng)
    mask = sample_mask(probs, rng)
    return ObservedMatrix.from_complete(complete, mask), probs


def estimate_probabilities(mask) -> ProbabilityModel:
    """Method-of-moments rank-1 estimate of the observation probabilities.

    With row counts ``r_i``, column counts ``k_s`` and total ``m``::

        cell[i]    = r_i / (N sqrt(nc))
        feature[s] = k_s / (D sqrt(nc))
        nc = max(max_{i,s} r_i k_s / (D N), m / (D N))

    The normalisation caps every product at 1.
    """
    if isinstance(mask, ObservedMatrix):
        mask = mask.mask
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise EstimationError("mask must be 2-D")
    n, d = mask.shape
    rows = mask.sum(axis=1).astype(float)
    cols = mask.sum(axis=0).astype(float)
    empty_rows = np.flatnonzero(rows == 0)
    if empty_rows.size:
        raise EstimationError(f"row {empty_rows[0]} has no observed cells")
    empty_cols = np.flatnonzero(cols == 0)
    if empty_cols.size:
        raise EstimationError(f"column {empty_cols[0]} has no observed cells")
    total = rows.sum()
    nc = max(rows.max() * cols.max() / (d * n), total / (d * n))
    root = np.sqrt(nc)
    return ProbabilityModel.rank1(rows / (n * root), cols / (d * root))
