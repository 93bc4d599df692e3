import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial.distance import pdist, squareform

from bcgram.errors import DomainError
from bcgram.gram import (
    EstimatorKind,
    bc_gram_heterogeneous,
    bc_gram_homogeneous,
    count_negative,
    gram_to_sq_dist,
    kl_to_covariance,
    moments_under_missingness,
    naive_gram,
    sq_dist_to_gram,
    variance_bounds,
    variance_exact,
    variance_report,
)
from bcgram.matrix_io import ObservedMatrix
from bcgram.missingness import ProbabilityModel, sample_mask


def random_psd(n, rng, eps=0.1):
    a = rng.standard_normal((n, n))
    return a @ a.T / n + eps * np.eye(n)


def draw(K, probs, rng):
    """Columns y_s ~ N(0, K), then Bernoulli masking with ``probs``."""
    L = np.linalg.cholesky(K)
    y = L @ rng.standard_normal((K.shape[0], probs.shape[1]))
    return ObservedMatrix.from_complete(y, sample_mask(probs, rng))


def full_obs(y):
    y = np.asarray(y, dtype=float)
    return ObservedMatrix(y, np.ones(y.shape, dtype=np.int8))


def within_4se(samples, target):
    samples = np.asarray(samples)
    se = samples.std(axis=0, ddof=1) / np.sqrt(len(samples))
    return np.all(np.abs(samples.mean(axis=0) - target) <= 4 * se)


# -- estimators ------------------------------------------------------------


def test_naive_example():
    G = naive_gram(full_obs([[1, 0], [0, 1]]))
    np.testing.assert_array_equal(G.entries, [[0.5, 0], [0, 0.5]])
    assert G.kind is EstimatorKind.NAIVE


def test_naive_masked_row_is_zero():
    m = ObservedMatrix.from_complete(np.ones((3, 4)), np.array([[1] * 4, [0] * 4, [1] * 4]))
    G = naive_gram(m).entries
    assert np.all(G[1] == 0) and np.all(G[:, 1] == 0)


def test_homogeneous_examples():
    y = full_obs([[2, 0], [0, 2]])
    np.testing.assert_array_equal(bc_gram_homogeneous(y, 0.5).entries, [[4, 0], [0, 4]])
    rng = np.random.default_rng(0)
    m = ObservedMatrix.from_complete(rng.standard_normal((5, 9)), rng.random((5, 9)) < 0.7)
    assert np.array_equal(bc_gram_homogeneous(m, 1.0).entries, naive_gram(m).entries)
    for p in (0.0, -0.1, 1.5):
        with pytest.raises(DomainError, match="0 < p <= 1"):
            bc_gram_homogeneous(m, p)


def test_reduction_chain_is_exact():
    rng = np.random.default_rng(1)
    m = ObservedMatrix.from_complete(rng.standard_normal((6, 50)), rng.random((6, 50)) < 0.6)
    ones = ProbabilityModel.from_matrix(np.ones((6, 50)))
    assert np.array_equal(bc_gram_heterogeneous(m, ones).entries, naive_gram(m).entries)
    for p in (0.3, 0.6, 0.77):
        het = bc_gram_heterogeneous(m, ProbabilityModel.constant(p, 6, 50)).entries
        assert np.array_equal(het, bc_gram_homogeneous(m, p).entries)
        full = bc_gram_heterogeneous(m, ProbabilityModel.from_matrix(np.full((6, 50), p))).entries
        np.testing.assert_allclose(full, het, rtol=1e-12)


def test_heterogeneous_shape_mismatch():
    m = full_obs(np.ones((3, 4)))
    with pytest.raises(DomainError):
        bc_gram_heterogeneous(m, ProbabilityModel.from_matrix(np.ones((3, 5))))


def test_symmetric_output():
    rng = np.random.default_rng(2)
    m = ObservedMatrix.from_complete(rng.standard_normal((7, 31)), rng.random((7, 31)) < 0.5)
    probs = ProbabilityModel.from_matrix(rng.uniform(0.3, 1, (7, 31)))
    G = bc_gram_heterogeneous(m, probs).entries
    assert np.array_equal(G, G.T)


def test_complete_data_naive_unbiased():
    rng = np.random.default_rng(3)
    K = random_psd(4, rng)
    ones = ProbabilityModel.constant(1.0, 4, 10_000)
    reps = [naive_gram(draw(K, ones, rng)).entries for _ in range(200)]
    assert within_4se(reps, K)


def test_homogeneous_unbiased_and_naive_shrinks():
    rng = np.random.default_rng(4)
    K = random_psd(4, rng)
    p = 0.6
    probs = ProbabilityModel.constant(p, 4, 10_000)
    bc, nv = [], []
    for _ in range(200):
        m = draw(K, probs, rng)
        bc.append(bc_gram_homogeneous(m, p).entries)
        nv.append(naive_gram(m).entries)
    assert within_4se(bc, K)
    shrink = np.full((4, 4), p * p)
    np.fill_diagonal(shrink, p)
    assert within_4se(nv, shrink * K)


def test_heterogeneous_unbiased():
    rng = np.random.default_rng(5)
    K = random_psd(4, rng)
    probs = ProbabilityModel.rank1(rng.uniform(0.4, 0.9, 4), rng.uniform(0.5, 1.0, 10_000))
    reps = [bc_gram_heterogeneous(draw(K, probs, rng), probs).entries for _ in range(200)]
    assert within_4se(reps, K)


# -- moments and variances -------------------------------------------------


def test_moments_complete_offdiag():
    K = np.array([[2.0, 0.7], [0.7, 1.5]])
    ones = ProbabilityModel.constant(1.0, 2, 1)
    mean, var = moments_under_missingness(K, ones, 0, 1, 0)
    assert mean == pytest.approx(0.7)
    assert var == pytest.approx(2.0 * 1.5 + 0.49)


def test_moments_diagonal_example():
    K = np.array([[2.0, 0.0], [0.0, 1.0]])
    probs = ProbabilityModel.from_matrix([[0.5], [1.0]])
    mean, var = moments_under_missingness(K, probs, 0, 0, 0)
    assert (mean, var) == pytest.approx((1.0, 5.0))
    rng = np.random.default_rng(6)
    y = rng.normal(0, np.sqrt(2.0), 10**6) * (rng.random(10**6) < 0.5)
    x = y * y
    assert abs(x.mean() - 1.0) < 4 * x.std() / 1e3
    assert abs(x.var() - 5.0) < 0.1


def test_moments_zero_covariance():
    K = np.array([[2.0, 0.0], [0.0, 3.0]])
    probs = ProbabilityModel.from_matrix([[0.5], [0.8]])
    mean, var = moments_under_missingness(K, probs, 0, 1, 0)
    assert mean == 0.0
    assert var == pytest.approx(0.4 * 6.0)


def test_moments_offdiag_simulated():
    rng = np.random.default_rng(7)
    K = np.array([[1.0, 0.6], [0.6, 2.0]])
    probs = ProbabilityModel.from_matrix([[0.7], [0.5]])
    mean, var = moments_under_missingness(K, probs, 0, 1, 0)
    z = np.linalg.cholesky(K) @ rng.standard_normal((2, 10**6))
    z *= rng.random((2, 10**6)) < np.array([[0.7], [0.5]])
    x = z[0] * z[1]
    assert abs(x.mean() - mean) < 4 * x.std() / 1e3
    assert x.var() == pytest.approx(var, rel=0.02)


def test_variance_complete_closed_form():
    rng = np.random.default_rng(8)
    K = random_psd(5, rng)
    v = variance_exact(K, ProbabilityModel.constant(1.0, 5, 300))
    d = np.diag(K)
    expected = (np.outer(d, d) + K**2) / 300
    np.fill_diagonal(expected, 2 * d**2 / 300)
    np.testing.assert_allclose(v, expected, rtol=1e-12)


def test_variance_matches_sum_of_moments():
    rng = np.random.default_rng(9)
    K = random_psd(3, rng)
    probs = ProbabilityModel.from_matrix(rng.uniform(0.3, 1.0, (3, 20)))
    p = probs.matrix()
    v = variance_exact(K, probs)
    for i in range(3):
        for j in range(3):
            var = sum(moments_under_missingness(K, probs, i, j, s)[1] for s in range(20))
            denom = p[i].sum() if i == j else (p[i] * p[j]).sum()
            assert v[i, j] == pytest.approx(var / denom**2, rel=1e-12)


def test_equality_when_complete():
    rng = np.random.default_rng(10)
    K = random_psd(4, rng)
    rep = variance_report(K, ProbabilityModel.constant(1.0, 4, 100))
    np.testing.assert_allclose(rep.lower, rep.exact, rtol=1e-12)
    np.testing.assert_allclose(rep.upper, rep.exact, rtol=1e-12)


def test_bounds_order_random_draws():
    rng = np.random.default_rng(11)
    for _ in range(1000):
        n, d = rng.integers(2, 6), rng.integers(1, 40)
        K = random_psd(n, rng)
        rep = variance_report(K, ProbabilityModel.from_matrix(rng.uniform(0.3, 1.0, (n, d))))
        assert rep.ordered()
        for a in (rep.exact, rep.lower, rep.upper):
            assert np.array_equal(a, a.T)


def test_bounds_scale_with_mean_probability():
    rng = np.random.default_rng(12)
    K = random_psd(4, rng)
    lo1, up1 = variance_bounds(K, ProbabilityModel.constant(0.8, 4, 200))
    lo2, up2 = variance_bounds(K, ProbabilityModel.constant(0.8 / np.sqrt(2), 4, 200))
    # p-bar for pairs is p**2, so this halves it off the diagonal
    off = ~np.eye(4, dtype=bool)
    np.testing.assert_allclose(lo2[off], 2 * lo1[off], rtol=1e-12)
    assert np.all(up2[off] > 1.9 * up1[off])


# -- conversions -----------------------------------------------------------


def test_sq_dist_examples():
    np.testing.assert_array_equal(gram_to_sq_dist(np.eye(2)), [[0, 2], [2, 0]])
    np.testing.assert_allclose(sq_dist_to_gram(np.array([[0, 2.0], [2.0, 0]])).entries, [[0.5, -0.5], [-0.5, 0.5]])


def test_sq_dist_matches_brute_force():
    y = np.random.default_rng(13).standard_normal((10, 5))
    np.testing.assert_allclose(gram_to_sq_dist(y @ y.T), squareform(pdist(y, "sqeuclidean")), atol=1e-12)


def test_sq_dist_to_gram_validates():
    with pytest.raises(DomainError):
        sq_dist_to_gram(np.array([[0, 1.0], [2.0, 0]]))
    with pytest.raises(DomainError):
        sq_dist_to_gram(np.array([[1.0, 1.0], [1.0, 0]]))


def test_negative_distances_are_counted_not_clamped():
    G = np.array([[1.0, 2.0], [2.0, 1.0]])
    e2 = gram_to_sq_dist(G)
    assert e2[0, 1] == -2.0
    assert count_negative(e2) == 1


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 12), st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_conversion_round_trips(n, d, seed):
    x = np.random.default_rng(seed).standard_normal((n, d)) * 3
    e2 = squareform(pdist(x, "sqeuclidean"))
    G = sq_dist_to_gram(e2).entries
    scale = max(e2.max(), 1e-300)
    assert np.max(np.abs(gram_to_sq_dist(G) - e2)) <= 1e-9 * scale
    # centred G survives the other direction
    np.testing.assert_allclose(G.sum(axis=1), 0, atol=1e-9 * scale)
    back = sq_dist_to_gram(gram_to_sq_dist(G)).entries
    assert np.max(np.abs(back - G)) <= 1e-9 * scale


def test_symmetric_input_gives_zero_diagonal():
    a = np.random.default_rng(14).standard_normal((6, 6))
    assert np.all(np.diag(gram_to_sq_dist(a + a.T)) == 0)


# -- KL --------------------------------------------------------------------


def test_kl_examples():
    rng = np.random.default_rng(15)
    K = random_psd(5, rng)
    assert kl_to_covariance(K, K) == pytest.approx(0.0, abs=1e-12)
    assert kl_to_covariance(np.array([[2.0]]), np.array([[1.0]])) == pytest.approx(0.5 - 0.5 * np.log(2))


def test_kl_matches_scipy_entropy_identity():
    rng = np.random.default_rng(16)
    K, G = random_psd(4, rng), random_psd(4, rng)
    n = 4
    expected = 0.5 * (np.trace(np.linalg.solve(K, G)) - n + np.linalg.slogdet(K)[1] - np.linalg.slogdet(G)[1])
    assert kl_to_covariance(G, K) == pytest.approx(expected, rel=1e-10)


def test_kl_rejects_singular():
    with pytest.raises(DomainError, match="Gram estimate G"):
        kl_to_covariance(np.diag([1.0, 0.0]), np.eye(2))
    with pytest.raises(DomainError, match="covariance K"):
        kl_to_covariance(np.eye(2), np.diag([1.0, -1.0]))


def test_kl_corrected_beats_naive():
    rng = np.random.default_rng(17)
    K = random_psd(5, rng)
    probs = ProbabilityModel.rank1(rng.uniform(0.4, 0.6, 5), rng.uniform(1.0, 1.6, 2000))
    bc, nv = [], []
    for _ in range(200):
        m = draw(K, probs, rng)
        bc.append(kl_to_covariance(bc_gram_heterogeneous(m, probs), K))
        nv.append(kl_to_covariance(naive_gram(m), K))
    assert np.median(bc) < np.median(nv)
