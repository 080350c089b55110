import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra import numpy as hnp
from scipy import stats

from hbae.probability import (NO_JITTER, DegenerateCovarianceError, GaussianModel, InsufficientSamplesError,
                              JitterPolicy, SampleEnsemble, derive_seed, estimate_moments, factorize,
                              gaussian_logpdf, make_rng, sample_gaussian)


def random_spd(rng, d):
    A = rng.standard_normal((d, d))
    return A @ A.T + d * np.eye(d)


class TestLogpdf:
    def test_at_mean_identity(self):
        d = 4
        m = GaussianModel(np.zeros(d), np.eye(d))
        assert gaussian_logpdf(np.zeros(d), m) == pytest.approx(-d / 2 * np.log(2 * np.pi), abs=1e-14)

    def test_standard_normal(self):
        m = GaussianModel([0.0], [[1.0]])
        assert gaussian_logpdf(np.array([1.0]), m) == pytest.approx(-1.4189385332046727, abs=1e-12)

    def test_matches_explicit_inverse(self):
        S = np.array([[2.0, 1.0], [1.0, 2.0]])
        x = np.array([1.0, 1.0])
        brute = -0.5 * x @ np.linalg.inv(S) @ x - 0.5 * np.log(np.linalg.det(2 * np.pi * S))
        assert gaussian_logpdf(x, GaussianModel(np.zeros(2), S)) == pytest.approx(brute, abs=1e-12)

    def test_matches_scipy(self, rng):
        S = random_spd(rng, 6)
        mu = rng.standard_normal(6)
        x = rng.standard_normal((5, 6))
        ref = stats.multivariate_normal(mu, S).logpdf(x)
        np.testing.assert_allclose(gaussian_logpdf(x, GaussianModel(mu, S)), ref, rtol=1e-11)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            gaussian_logpdf(np.zeros(3), GaussianModel(np.zeros(2), np.eye(2)))

    @given(st.integers(2, 6), st.integers(0, 2 ** 32 - 1))
    def test_permutation_invariance(self, d, seed):
        r = np.random.default_rng(seed)
        S, mu, x = random_spd(r, d), r.standard_normal(d), r.standard_normal(d)
        perm = r.permutation(d)
        a = gaussian_logpdf(x, GaussianModel(mu, S))
        b = gaussian_logpdf(x[perm], GaussianModel(mu[perm], S[np.ix_(perm, perm)]))
        assert a == pytest.approx(b, rel=1e-10, abs=1e-10)

    @given(st.integers(1, 4), st.integers(1, 4), st.integers(0, 2 ** 32 - 1))
    def test_block_diagonal_additivity(self, d1, d2, seed):
        r = np.random.default_rng(seed)
        S1, S2 = random_spd(r, d1), random_spd(r, d2)
        x = r.standard_normal(d1 + d2)
        S = np.zeros((d1 + d2, d1 + d2))
        S[:d1, :d1], S[d1:, d1:] = S1, S2
        whole = gaussian_logpdf(x, GaussianModel(np.zeros(d1 + d2), S))
        parts = gaussian_logpdf(x[:d1], GaussianModel(np.zeros(d1), S1)) + \
            gaussian_logpdf(x[d1:], GaussianModel(np.zeros(d2), S2))
        assert abs(whole - parts) < 1e-10


class TestFactorize:
    def test_identity(self):
        L, j = factorize(np.eye(3))
        np.testing.assert_array_equal(L, np.eye(3))
        assert j == 0.0

    def test_zero_matrix_uses_first_ladder_rung(self):
        L, j = factorize(np.zeros((2, 2)))
        assert j > 0
        np.testing.assert_allclose(L, np.sqrt(j) * np.eye(2))

    def test_random_spd_reconstruction(self):
        S = random_spd(np.random.default_rng(5), 5)
        L, j = factorize(S)
        assert j == 0.0
        assert np.allclose(L, np.tril(L))
        assert np.linalg.norm(L @ L.T - S) < 1e-10

    def test_rank_deficient_gets_smallest_jitter(self):
        v = np.array([[1.0], [2.0], [3.0]])
        S = v @ v.T
        L, j = factorize(S)
        scale = np.trace(S) / 3
        assert 0 < j <= 1e-4 * scale
        # the previous rung must have failed
        with pytest.raises(np.linalg.LinAlgError):
            np.linalg.cholesky(S + (j / 10 if j / 10 >= 1e-12 * scale * 0.99 else 0.0) * np.eye(3))
        assert np.linalg.norm(L @ L.T - (S + j * np.eye(3))) <= 1e-8 * np.linalg.norm(S)

    def test_non_square(self):
        with pytest.raises(ValueError):
            factorize(np.ones((2, 3)))

    def test_indefinite_exhausts_ladder(self):
        with pytest.raises(DegenerateCovarianceError):
            factorize(np.diag([1.0, -1.0]))

    def test_disabled_ladder(self):
        with pytest.raises(DegenerateCovarianceError):
            factorize(np.zeros((2, 2)), NO_JITTER)

    def test_ladder_values(self):
        lad = list(JitterPolicy().ladder(2.0 * np.eye(3)))
        np.testing.assert_allclose(lad, [0.0] + [2.0 * 10.0 ** e for e in range(-12, -3)])

    @given(hnp.arrays(float, (4, 4), elements=st.floats(-3, 3)))
    def test_symmetrized_and_reconstructs(self, A):
        S = A @ A.T
        try:
            m = GaussianModel(np.zeros(4), S)
            L = m.factor
        except DegenerateCovarianceError:
            return
        assert np.array_equal(m.covariance, m.covariance.T)
        target = S + m.jitter_used * np.eye(4)
        assert np.linalg.norm(L @ L.T - target) <= 1e-8 * max(np.linalg.norm(target), 1e-300)


class TestMoments:
    def test_two_points(self):
        mean, cov = estimate_moments(SampleEnsemble(np.array([[1.0, 2.0], [3.0, 4.0]])))
        np.testing.assert_array_equal(mean, [2.0, 3.0])
        np.testing.assert_array_equal(cov, [[2.0, 2.0], [2.0, 2.0]])

    def test_identical_samples(self):
        _, cov = estimate_moments(SampleEnsemble(np.tile([0.3, -1.7, 2.2], (7, 1))))
        assert np.all(cov == 0.0)

    def test_standard_normal_draws(self):
        x = make_rng(11).standard_normal((1000, 2))
        mean, cov = estimate_moments(SampleEnsemble(x))
        assert np.all(np.abs(mean) < 0.1)
        assert np.all(np.abs(cov - np.eye(2)) < 0.15)

    def test_too_few(self):
        with pytest.raises(InsufficientSamplesError):
            estimate_moments(SampleEnsemble(np.ones((1, 3))))

    @given(hnp.arrays(float, st.tuples(st.integers(2, 30), st.integers(1, 5)), elements=st.floats(-1e3, 1e3)))
    def test_cov_symmetric_psd(self, x):
        _, cov = estimate_moments(SampleEnsemble(x))
        assert np.array_equal(cov, cov.T)
        ev = np.linalg.eigvalsh(cov)
        assert ev.min() >= -1e-8 * max(ev.max(), 0.0) - 1e-12

    def test_recovers_moments(self):
        r = np.random.default_rng(3)
        S, mu = random_spd(r, 3), r.standard_normal(3)
        n = 10_000
        mean, cov = estimate_moments(sample_gaussian(GaussianModel(mu, S), n, make_rng(4)))
        se_mean = np.sqrt(np.diag(S) / n)
        assert np.all(np.abs(mean - mu) < 5 * se_mean)
        se_cov = np.sqrt((S ** 2 + np.outer(np.diag(S), np.diag(S))) / n)
        assert np.all(np.abs(cov - S) < 5 * se_cov)


class TestSampling:
    def test_zero_cov_without_jitter(self):
        m = GaussianModel([1.0, -2.0], np.zeros((2, 2)), NO_JITTER)
        with pytest.raises(DegenerateCovarianceError):
            m.factor
        s = m.sample(5, make_rng(0)).samples
        np.testing.assert_array_equal(s, np.tile([1.0, -2.0], (5, 1)))

    def test_standard_normal_moments(self):
        s = GaussianModel([0.0], [[1.0]]).sample(100_000, make_rng(1)).samples[:, 0]
        assert abs(s.mean()) < 0.02
        assert abs(s.var(ddof=1) - 1.0) < 0.02

    def test_deterministic(self):
        m = GaussianModel(np.zeros(3), np.eye(3))
        a = m.sample(10, make_rng(99)).samples
        b = m.sample(10, make_rng(99)).samples
        assert a.tobytes() == b.tobytes()


class TestRng:
    def test_derive_seed_stable(self):
        assert derive_seed(1, "naive", 0) == derive_seed(1, "naive", 0)
        assert derive_seed(1, "naive", 0) != derive_seed(1, "naive", 1)
        assert 0 <= derive_seed(2 ** 64 - 1, "x") < 2 ** 64

    def test_labels_split_streams(self):
        a = make_rng(5, "a").random(4)
        b = make_rng(5, "b").random(4)
        assert not np.array_equal(a, b)
        np.testing.assert_array_equal(a, make_rng(derive_seed(5, "a")).random(4))
