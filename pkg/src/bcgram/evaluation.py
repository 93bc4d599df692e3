"""Clustered PPCA simulator, adjusted Rand index, and experiment runners."""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass
from math import comb

import numpy as np
from scipy import stats

from ._parallel import pmap
from ._rng import derive_seed, stream
from .clustering import canonical_labels, kmeans
from .dimred import pca_from_gram
from .errors import ConfigError, DomainError
from .gram import (
    bc_gram_heterogeneous,
    kl_to_covariance,
    naive_gram,
    variance_bounds,
    variance_exact,
)
from .matrix_io import ObservedMatrix
from .missingness import (
    MechanismSpec,
    ProbabilityModel,
    apply_missingness,
    estimate_probabilities,
)

log = logging.getLogger(__name__)


# --------------------------------------------------------------------------
# simulation
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SimulatedDataset:
    complete: np.ndarray
    truth: np.ndarray
    latent: np.ndarray
    loadings: np.ndarray
    observed: ObservedMatrix | None = None
    true_probs: ProbabilityModel | None = None


def cluster_centroids(k: int, d_latent: int, separation: float) -> np.ndarray:
    """Centroids ``separation`` apart, centred on the origin.

    Uses a regular simplex when ``k <= d_latent + 1``; otherwise a regular
    polygon (adjacent vertices ``separation`` apart) in the first two axes,
    or evenly spaced points on a line when ``d_latent == 1``.
    """
    out = np.zeros((k, d_latent))
    if k == 1:
        return out
    if k <= d_latent + 1:
        # Helmert basis of the sum-zero subspace of R^k
        basis = np.zeros((k - 1, k))
        for r in range(1, k):
            basis[r - 1, :r] = 1.0
            basis[r - 1, r] = -r
            basis[r - 1] /= np.sqrt(r * (r + 1))
        out[:, : k - 1] = np.eye(k) @ basis.T * (separation / np.sqrt(2))
    elif d_latent >= 2:
        radius = separation / (2 * np.sin(np.pi / k))
        ang = 2 * np.pi * np.arange(k) / k
        out[:, 0] = radius * np.cos(ang)
        out[:, 1] = radius * np.sin(ang)
    else:
        out[:, 0] = separation * (np.arange(k) - (k - 1) / 2)
    return out - out.mean(axis=0)


def simulate_ppca(
    n: int = 300,
    d_in: int = 3000,
    d_latent: int = 2,
    k: int = 3,
    separation: float = 8.0,
    noise_sd: float = 1.0,
    offset: float = 40.0,
    seed=0,
    loadings=None,
) -> SimulatedDataset:
    """Clustered data from a linear-kernel latent variable model.

    Latent points are unit-variance Gaussians around ``k`` centroids placed
    ``separation`` apart; the whole configuration sits ``offset`` away from
    the latent origin along the first axis. Data are ``X W^T + noise`` with
    ``W`` standard normal scaled by ``1/sqrt(d_latent)`` unless ``loadings``
    is given.

    The offset matters: with centroids around the origin, zero-filled
    missing cells shrink each row nearly uniformly and naive PCA loses
    little, whereas an offset turns that shrinkage into spread across the
    cluster plane.
    """
    if not 1 <= k <= n:
        raise DomainError(f"need 1 <= k <= n, got k={k}, n={n}")
    if loadings is None and not 1 <= d_latent < d_in:
        raise DomainError(f"need 1 <= d_latent < d_in, got {d_latent}, {d_in}")
    if separation < 0 or noise_sd < 0:
        raise DomainError("separation and noise_sd must be nonnegative")
    rng = np.random.default_rng(seed)
    sizes = np.full(k, n // k)
    sizes[: n % k] += 1
    truth = np.repeat(np.arange(k), sizes)
    centroids = cluster_centroids(k, d_latent, separation)
    centroids[:, 0] += offset
    latent = centroids[truth] + rng.standard_normal((n, d_latent))
    if loadings is None:
        w = rng.standard_normal((d_in, d_latent)) / np.sqrt(d_latent)
    else:
        w = np.asarray(loadings, dtype=float)
        if w.shape != (d_in, d_latent):
            raise DomainError(f"loadings must be {d_in}x{d_latent}, got {w.shape}")
    complete = latent @ w.T
    if noise_sd > 0:
        complete = complete + noise_sd * rng.standard_normal((n, d_in))
    return SimulatedDataset(complete=complete, truth=truth, latent=latent, loadings=w)


def with_missingness(ds: SimulatedDataset, spec: MechanismSpec | None) -> SimulatedDataset:
    if spec is None:
        observed = ObservedMatrix(ds.complete, np.ones(ds.complete.shape, dtype=np.int8))
        probs = ProbabilityModel.constant(1.0, *ds.complete.shape)
    else:
        observed, probs = apply_missingness(ds.complete, spec)
    return dataclasses.replace(ds, observed=observed, true_probs=probs)


def random_covariance(n: int, rng: np.random.Generator, eps: float = 0.1, rank: int | None = None) -> np.ndarray:
    """Well-conditioned random covariance ``A A^T / r + eps I``."""
    r = n if rank is None else rank
    a = rng.standard_normal((n, r))
    k = a @ a.T / r + eps * np.eye(n)
    return (k + k.T) / 2


@dataclass(frozen=True, eq=False)
class PlantedDropouts:
    data: np.ndarray
    """Log-scale expression with true zeros and artificial dropouts."""
    dropout: np.ndarray
    """True where a zero was planted as a dropout."""
    labels: np.ndarray


def simulate_planted_dropouts(
    n_per_cluster: int = 40,
    n_genes: int = 60,
    dropout_rate: float = 0.3,
    low: float = 3.0,
    high: float = 6.0,
    seed: int = 0,
) -> PlantedDropouts:
    """Two sample groups; each gene is expressed in one group and silent in the other.

    Genes alternate which group expresses them. Expressed values are
    ``U[low, high]`` and a ``dropout_rate`` share of them is zeroed. The
    silent group's zeros are true non-expression.
    """
    if not 0 <= dropout_rate < 1:
        raise DomainError("dropout_rate must lie in [0, 1)")
    rng = np.random.default_rng(seed)
    labels = np.repeat([0, 1], n_per_cluster)
    on_group = np.arange(n_genes) % 2
    expressed = labels[:, None] == on_group[None, :]
    data = np.where(expressed, rng.uniform(low, high, (labels.size, n_genes)), 0.0)
    dropout = expressed & (rng.random(data.shape) < dropout_rate)
    data[dropout] = 0.0
    return PlantedDropouts(data=data, dropout=dropout, labels=labels)


def dropout_accuracy(call, planted: PlantedDropouts) -> float:
    """Share of zero cells whose dropout/non-expression call is right."""
    zero = planted.data == 0
    called = np.asarray(call.mask) == 0
    return float(np.mean(called[zero] == planted.dropout[zero]))


# --------------------------------------------------------------------------
# clustering agreement
# --------------------------------------------------------------------------


def ari(a, b) -> float:
    """Adjusted Rand index between two labelings."""
    a = np.asarray(a).ravel()
    b = np.asarray(b).ravel()
    if a.size != b.size:
        raise DomainError(f"labelings differ in length: {a.size} vs {b.size}")
    n = a.size
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    table = np.zeros((ai.max() + 1, bi.max() + 1), dtype=np.int64)
    np.add.at(table, (ai, bi), 1)
    pairs = lambda x: sum(comb(int(v), 2) for v in np.ravel(x))  # noqa: E731
    index = pairs(table)
    rows = pairs(table.sum(axis=1))
    cols = pairs(table.sum(axis=0))
    total = comb(n, 2)
    expected = rows * cols / total if total else 0.0
    max_index = (rows + cols) / 2
    if max_index == expected:
        return 1.0
    return float((index - expected) / (max_index - expected))


# --------------------------------------------------------------------------
# dimension-reduction experiment
# --------------------------------------------------------------------------

PIPELINES = ("complete", "naive", "bc-true", "bc-estimated")


def _from_dict(cls, data: dict):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name in data:
            v = data[f.name]
            kwargs[f.name] = tuple(v) if isinstance(v, list) else v
    return cls(**kwargs)


@dataclass(frozen=True)
class ExperimentConfig:
    n: int = 300
    d_in: int = 3000
    d_latent: int = 2
    k: int = 3
    separation: float = 8.0
    offset: float = 40.0
    noise_sd: float = 1.0
    mechanism: str | None = "rank1:0.4,0.6,0.7,0.9"
    subset_sizes: tuple[int, ...] = (500, 1000, 2000, 3000)
    n_subsets: int = 10
    kmeans_restarts: int = 30
    dims: int = 2
    center: bool = True
    pipelines: tuple[str, ...] = PIPELINES
    seed: int = 0

    def __post_init__(self):
        bad = [s for s in self.subset_sizes if not 1 <= s <= self.d_in]
        if bad:
            raise ConfigError(f"subset sizes {bad} exceed the {self.d_in} available features")
        unknown = set(self.pipelines) - set(PIPELINES)
        if unknown:
            raise ConfigError(f"unknown pipelines {sorted(unknown)}; choose from {PIPELINES}")
        if self.n_subsets < 1 or self.kmeans_restarts < 1:
            raise ConfigError("n_subsets and kmeans_restarts must be positive")
        if self.mechanism is not None:
            try:
                MechanismSpec.parse(self.mechanism)
            except DomainError as exc:
                raise ConfigError(str(exc)) from None

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        return _from_dict(cls, data)

    # Stream keys: 0 dataset, 1 mechanism, 2 feature subsets, 3 k-means.
    def dataset_seed(self) -> int:
        return derive_seed(self.seed, 0)

    def mechanism_seed(self) -> int:
        return derive_seed(self.seed, 1)

    def subset_rng(self, size: int, rep: int) -> np.random.Generator:
        return stream(self.seed, 2, size, rep)

    def kmeans_seed(self, size: int, rep: int) -> int:
        return derive_seed(self.seed, 3, size, rep)


@dataclass(frozen=True, eq=False)
class ExperimentReport:
    config: ExperimentConfig
    rows: list
    """(pipeline, subset_size, replicate, ari) tuples."""
    missing_fraction: float

    def values(self, pipeline: str, size: int) -> np.ndarray:
        return np.array([r[3] for r in self.rows if r[0] == pipeline and r[1] == size])

    def summary(self) -> dict:
        out = {}
        for p in self.config.pipelines:
            out[p] = {}
            for s in self.config.subset_sizes:
                v = self.values(p, s)
                out[p][s] = {
                    "mean": float(v.mean()),
                    "sd": float(v.std(ddof=1)) if v.size > 1 else 0.0,
                    "count": int(v.size),
                }
        return out


def simulate_experiment_data(config: ExperimentConfig) -> SimulatedDataset:
    ds = simulate_ppca(
        n=config.n,
        d_in=config.d_in,
        d_latent=config.d_latent,
        k=config.k,
        separation=config.separation,
        noise_sd=config.noise_sd,
        offset=config.offset,
        seed=config.dataset_seed(),
    )
    spec = None
    if config.mechanism is not None:
        spec = MechanismSpec.parse(config.mechanism, seed=config.mechanism_seed())
    return with_missingness(ds, spec)


def pipeline_gram(pipeline: str, ds: SimulatedDataset, cols: np.ndarray):
    obs = ds.observed.columns(cols)
    if pipeline == "complete":
        full = ObservedMatrix(ds.complete[:, cols], np.ones(obs.mask.shape, dtype=np.int8))
        return naive_gram(full)
    if pipeline == "naive":
        return naive_gram(obs)
    if pipeline == "bc-true":
        return bc_gram_heterogeneous(obs, ds.true_probs.columns(cols))
    if pipeline == "bc-estimated":
        return bc_gram_heterogeneous(obs, estimate_probabilities(obs.mask))
    raise ConfigError(f"unknown pipeline {pipeline!r}")


def cluster_gram(G, config: ExperimentConfig, seed) -> np.ndarray:
    """Gram -> PCA coordinates -> k-means labels, as every pipeline does."""
    coords = pca_from_gram(G, d=config.dims, center=config.center).coords
    return kmeans(coords, config.k, restarts=config.kmeans_restarts, seed=seed)


def run_missingness_experiment(config: ExperimentConfig, threads=1) -> ExperimentReport:
    """ARI of each pipeline over random feature subsets of every requested size."""
    ds = simulate_experiment_data(config)
    units = [(size, rep) for size in config.subset_sizes for rep in range(config.n_subsets)]

    def work(unit):
        size, rep = unit
        cols = np.sort(config.subset_rng(size, rep).choice(config.d_in, size, replace=False))
        seed = config.kmeans_seed(size, rep)
        out = []
        for p in config.pipelines:
            labels = cluster_gram(pipeline_gram(p, ds, cols), config, seed)
            out.append((p, size, rep, ari(ds.truth, labels)))
        return out

    rows = [r for chunk in pmap(work, units, threads) for r in chunk]
    return ExperimentReport(config=config, rows=rows, missing_fraction=ds.observed.missing_fraction)


# --------------------------------------------------------------------------
# Monte Carlo verification of the estimator
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class VerificationConfig:
    n: int = 5
    d: int = 2000
    replicates: int = 200
    mechanism: str = "rank1:0.4,0.6,0.7,0.9"
    eps: float = 0.1
    variance_n: int = 4
    variance_d: int = 500
    variance_replicates: int = 5000
    variance_p_range: tuple[float, float] = (0.3, 1.0)
    clt_d: int = 5000
    clt_replicates: int = 1000
    clt_homogeneous_p: float = 0.6
    clt_pair: tuple[int, int] = (0, 1)
    d_sweep: tuple[int, ...] = (500, 2000, 8000)
    sweep_replicates: int = 50
    seed: int = 0

    def __post_init__(self):
        if self.n < 2 or self.variance_n < 2:
            raise ConfigError("need at least 2 samples")
        if min(self.replicates, self.variance_replicates, self.clt_replicates, self.sweep_replicates) < 2:
            raise ConfigError("need at least 2 replicates everywhere")
        lo, hi = self.variance_p_range
        if not 0 < lo <= hi <= 1:
            raise ConfigError(f"variance_p_range must satisfy 0 < low <= high <= 1, got {self.variance_p_range}")
        i, j = self.clt_pair
        if not (0 <= i < self.n and 0 <= j < self.n and i != j):
            raise ConfigError(f"clt_pair must be two distinct indices below n={self.n}")
        try:
            MechanismSpec.parse(self.mechanism)
        except DomainError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def from_dict(cls, data: dict) -> "VerificationConfig":
        return _from_dict(cls, data)


def simulate_gram_sums(K: np.ndarray, probs: ProbabilityModel, rng: np.random.Generator) -> np.ndarray:
    """One draw of the zero-filled ``Y Y^T`` with columns from ``N(0, K)``."""
    n, d = probs.shape
    chol = np.linalg.cholesky(K)
    y = chol @ rng.standard_normal((n, d))
    y *= rng.random((n, d)) < probs.matrix()
    g = y @ y.T
    return (g + g.T) / 2


def standardized_sum(raw_g: np.ndarray, K: np.ndarray, probs: ProbabilityModel, i: int, j: int) -> float:
    """``sum_s (x_s - mu_s) / sqrt(sum_s Var x_s)`` for ``x_s = y_is y_js``."""
    p = probs.matrix()
    if i == j:
        pi = p[i]
        mu = pi * K[i, i]
        var = K[i, i] ** 2 * (3 * pi - pi**2)
    else:
        pp = p[i] * p[j]
        mu = pp * K[i, j]
        var = pp * K[i, i] * K[j, j] + K[i, j] ** 2 * (2 * pp - pp**2)
    return float((raw_g[i, j] - mu.sum()) / np.sqrt(var.sum()))


def _corrected(raw_g: np.ndarray, probs: ProbabilityModel) -> np.ndarray:
    out = raw_g / probs.pair_sums()
    np.fill_diagonal(out, np.diag(raw_g) / probs.row_sums())
    return out


def _mechanism_probs(config: VerificationConfig, n: int, d: int, key: int) -> ProbabilityModel:
    spec = MechanismSpec.parse(config.mechanism)
    return spec.probabilities(n, d, stream(config.seed, key, n, d))


def _replicate_grams(K, probs, seed, key, reps, threads):
    return np.stack(pmap(lambda r: simulate_gram_sums(K, probs, stream(seed, key, r)), range(reps), threads))


def verify_bias(config: VerificationConfig, threads=1) -> dict:
    K = random_covariance(config.n, stream(config.seed, 10), eps=config.eps)
    probs = _mechanism_probs(config, config.n, config.d, 11)
    raw = _replicate_grams(K, probs, config.seed, 12, config.replicates, threads)
    d = config.d
    naive = raw / d
    bc = np.stack([_corrected(g, probs) for g in raw])
    var = variance_exact(K, probs)
    se = np.sqrt(var / config.replicates)
    factor = probs.pair_sums() / d
    np.fill_diagonal(factor, probs.row_sums() / d)
    kl_naive, kl_bc, kl_failed = [], [], 0
    for a, b in zip(naive, bc):
        try:
            kl_naive.append(kl_to_covariance(a, K))
            kl_bc.append(kl_to_covariance(b, K))
        except DomainError:
            kl_failed += 1
    return {
        "K": K,
        "naive_factor": factor,
        "bc_mean": bc.mean(axis=0),
        "naive_mean": naive.mean(axis=0),
        "standard_error": se,
        "bc_z": (bc.mean(axis=0) - K) / se,
        "naive_z_vs_prediction": (naive.mean(axis=0) - factor * K) / se,
        "kl_naive_median": float(np.median(kl_naive)) if kl_naive else None,
        "kl_bc_median": float(np.median(kl_bc)) if kl_bc else None,
        "kl_failed": kl_failed,
        "missing_fraction": float(1 - probs.matrix().mean()),
    }


def verify_variance(config: VerificationConfig, threads=1, replicates: int | None = None) -> dict:
    """Empirical vs exact variance of the corrected entries, and bound coverage.

    Probabilities are drawn entrywise from ``U(variance_p_range)``.
    ``violation_se`` expresses each bound violation in standard errors of
    the empirical variance (from the sample fourth central moment), which
    separates Monte Carlo noise from a wrong bound.
    """
    reps = replicates or config.variance_replicates
    n, d = config.variance_n, config.variance_d
    K = random_covariance(n, stream(config.seed, 20), eps=config.eps)
    probs = ProbabilityModel.from_matrix(stream(config.seed, 21).uniform(*config.variance_p_range, (n, d)))
    raw = _replicate_grams(K, probs, config.seed, 22, reps, threads)
    bc = np.stack([_corrected(g, probs) for g in raw])
    empirical = bc.var(axis=0, ddof=1)
    centred = bc - bc.mean(axis=0)
    se = np.sqrt(np.maximum(np.mean(centred**4, axis=0) - empirical**2, 0) / reps)
    exact = variance_exact(K, probs)
    lower, upper = variance_bounds(K, probs)
    iu = np.triu_indices(n)
    excess = np.maximum(lower - empirical, empirical - upper)
    outside = excess > 0
    return {
        "replicates": reps,
        "empirical": empirical,
        "empirical_se": se,
        "exact": exact,
        "lower": lower,
        "upper": upper,
        "ratio": empirical / exact,
        "max_relative_error": float(np.max(np.abs(empirical / exact - 1)[iu])),
        "bound_violations": int(np.sum(outside[iu])),
        "max_violation_se": float(np.max(np.where(outside, excess / se, 0.0)[iu])),
        "min_bound_margin": float(np.min((np.minimum(exact - lower, upper - exact) / exact)[iu])),
        "entries": int(iu[0].size),
    }


def verify_clt(config: VerificationConfig, threads=1) -> dict:
    n, d = config.n, config.clt_d
    K = random_covariance(n, stream(config.seed, 30), eps=config.eps)
    regimes = {
        "complete": ProbabilityModel.constant(1.0, n, d),
        "homogeneous": ProbabilityModel.constant(config.clt_homogeneous_p, n, d),
        "heterogeneous": _mechanism_probs(config, n, d, 31),
    }
    i, j = config.clt_pair
    out = {}
    for r, (name, probs) in enumerate(regimes.items()):
        raw = _replicate_grams(K, probs, config.seed, 32 + r, config.clt_replicates, threads)
        res = {}
        for label, (a, b) in (("offdiag", (i, j)), ("diag", (i, i))):
            z = np.array([standardized_sum(g, K, probs, a, b) for g in raw])
            ks = stats.kstest(z, "norm")
            res[label] = {"ks_statistic": float(ks.statistic), "p_value": float(ks.pvalue),
                          "z_mean": float(z.mean()), "z_sd": float(z.std(ddof=1))}
        out[name] = res
    return out


def verify_consistency(config: VerificationConfig, threads=1) -> dict:
    n = config.n
    K = random_covariance(n, stream(config.seed, 40), eps=config.eps)
    table = {}
    for d in config.d_sweep:
        probs = _mechanism_probs(config, n, d, 41)
        raw = _replicate_grams(K, probs, config.seed, 42 + d, config.sweep_replicates, threads)
        bc_err = [np.abs(_corrected(g, probs) - K).max() for g in raw]
        naive_err = [np.abs(g / d - K).max() for g in raw]
        table[d] = {
            "bc_median_max_error": float(np.median(bc_err)),
            "naive_median_max_error": float(np.median(naive_err)),
        }
    ds = sorted(table)
    ratio = table[ds[0]]["bc_median_max_error"] / table[ds[-1]]["bc_median_max_error"]
    return {"table": table, "ratio_smallest_to_largest": float(ratio)}


def run_estimator_verification(config: VerificationConfig, threads=1) -> dict:
    """All Monte Carlo checks of the corrected estimator in one report."""
    return {
        "bias": verify_bias(config, threads),
        "variance": verify_variance(config, threads),
        "clt": verify_clt(config, threads),
        "consistency": verify_consistency(config, threads),
    }


def jsonable(obj):
    """Recursively convert arrays and numpy scalars for ``json.dump``."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    if dataclasses.is_dataclass(obj):
        return jsonable(dataclasses.asdict(obj))
    return obj
