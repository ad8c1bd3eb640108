import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from distdetect.errors import ConvergenceError, DimensionError, DivergenceError, FactorizationError
from distdetect.matcore import (
    GaussianSampler,
    as_mat,
    kron,
    psd_factor,
    sample_gaussian_vec,
    solve_discrete_lyapunov,
    spectral_radius,
    two_norm,
)


def kron_loops(a, b):
    p, q = a.shape
    r, s = b.shape
    out = np.zeros((p * r, q * s))
    for i in range(p):
        for j in range(q):
            for k in range(r):
                for m in range(s):
                    out[i * r + k, j * s + m] = a[i, j] * b[k, m]
    return out


class TestKron:
    def test_identity(self):
        np.testing.assert_array_equal(kron(np.eye(2), np.eye(3)), np.eye(6))

    def test_scalar(self, rng):
        b = rng.normal(size=(3, 4))
        np.testing.assert_array_equal(kron([[2.0]], b), 2 * b)

    def test_matches_definition(self, rng):
        a, b = rng.normal(size=(3, 3)), rng.normal(size=(3, 3))
        np.testing.assert_allclose(kron(a, b), kron_loops(a, b), rtol=0, atol=1e-15)

    def test_rectangular(self, rng):
        a, b = rng.normal(size=(2, 3)), rng.normal(size=(4, 1))
        np.testing.assert_allclose(kron(a, b), kron_loops(a, b))

    def test_size_cap(self):
        with pytest.raises(DimensionError):
            kron(np.eye(200), np.eye(200), max_dim=1000)


class TestAsMat:
    def test_rejects_nan(self):
        with pytest.raises(ValueError):
            as_mat([[1.0, np.nan]])

    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            as_mat(np.zeros((0, 2)))


class TestSpectralRadius:
    def test_diagonal(self):
        assert spectral_radius(np.diag([0.5, 1.1])) == pytest.approx(1.1, abs=1e-9)

    def test_rotation(self):
        rot = np.array([[0.0, -1.0], [1.0, 0.0]])
        assert spectral_radius(rot) == pytest.approx(1.0, abs=1e-9)

    def test_zero(self):
        assert spectral_radius(np.zeros((3, 3))) == 0.0

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_charpoly_roots(self, seed):
        a = np.random.default_rng(seed).normal(size=(5, 5))
        roots = np.roots(np.poly(a))
        assert spectral_radius(a) == pytest.approx(np.max(np.abs(roots)), abs=1e-6)

    def test_power_only_raises_on_failure(self):
        # equal-modulus complex pair never settles under plain power iteration
        rot = np.array([[0.0, -1.0], [1.0, 0.0]]) * 2.0
        with pytest.raises(ConvergenceError):
            spectral_radius(rot, method="power", max_iter=50)

    def test_nonsquare(self):
        with pytest.raises(DimensionError):
            spectral_radius(np.ones((2, 3)))


class TestTwoNorm:
    def test_identity(self):
        assert two_norm(np.eye(4)) == pytest.approx(1.0)

    def test_rank_one(self, rng):
        u, v = rng.normal(size=3), rng.normal(size=5)
        assert two_norm(np.outer(u, v)) == pytest.approx(np.linalg.norm(u) * np.linalg.norm(v), rel=1e-9)

    def test_self_consistency(self, rng):
        a = rng.normal(size=(4, 6))
        assert two_norm(a) == pytest.approx(np.sqrt(spectral_radius(a.T @ a)), abs=1e-8)

    @settings(max_examples=40, deadline=None)
    @given(arrays(np.float64, (4, 3), elements=st.floats(-10, 10)))
    def test_matches_svd(self, a):
        assert two_norm(a) == pytest.approx(np.linalg.svd(a, compute_uv=False)[0], rel=1e-6, abs=1e-9)


def truncated_lyapunov(abar, sigma, terms=200):
    out = np.zeros_like(sigma)
    p = np.eye(abar.shape[0])
    for _ in range(terms + 1):
        out += p @ sigma @ p.T
        p = abar @ p
    return out


class TestLyapunov:
    def test_zero_abar(self, rng):
        s = rng.normal(size=(3, 3))
        s = s @ s.T
        np.testing.assert_allclose(solve_discrete_lyapunov(np.zeros((3, 3)), s), s)

    def test_scalar(self):
        assert solve_discrete_lyapunov([[0.5]], [[1.0]])[0, 0] == pytest.approx(4.0 / 3.0, abs=1e-12)

    @pytest.mark.parametrize("seed", range(3))
    def test_truncated_series(self, seed):
        rng = np.random.default_rng(seed)
        a = rng.normal(size=(4, 4))
        a *= 0.8 / np.max(np.abs(np.linalg.eigvals(a)))
        s = rng.normal(size=(4, 4))
        s = s @ s.T
        np.testing.assert_allclose(solve_discrete_lyapunov(a, s), truncated_lyapunov(a, s), atol=1e-8)

    def test_unstable_rejected(self):
        with pytest.raises(DivergenceError):
            solve_discrete_lyapunov(np.diag([1.2, 0.1]), np.eye(2))

    def test_against_scipy(self, rng):
        scipy_linalg = pytest.importorskip("scipy.linalg")
        a = rng.normal(size=(6, 6))
        a *= 0.95 / np.max(np.abs(np.linalg.eigvals(a)))
        s = np.eye(6)
        np.testing.assert_allclose(solve_discrete_lyapunov(a, s),
                                   scipy_linalg.solve_discrete_lyapunov(a, s), atol=1e-8)


class TestSampler:
    def test_reproducible(self):
        a = GaussianSampler(7, 3).standard_normal(50)
        b = GaussianSampler(7, 3).standard_normal(50)
        np.testing.assert_array_equal(a, b)

    def test_streams_differ(self):
        a = GaussianSampler(7, 3).standard_normal(50)
        b = GaussianSampler(7, 4).standard_normal(50)
        assert not np.allclose(a, b)

    def test_odd_length(self):
        assert GaussianSampler(0).standard_normal(7).shape == (7,)

    def test_negative_seed(self):
        with pytest.raises(ValueError):
            GaussianSampler(-1)

    def test_zero_cov_returns_mean(self):
        mean = np.array([1.0, -2.0, 3.0])
        np.testing.assert_array_equal(sample_gaussian_vec(GaussianSampler(0), mean, np.zeros((3, 3))), mean)

    def test_diag_variance(self):
        s = GaussianSampler(1, 0)
        draws = np.array([sample_gaussian_vec(s, np.zeros(3), 0.06 * np.eye(3)) for _ in range(100_000)])
        var = draws.var(axis=0)
        assert np.all((var > 0.055) & (var < 0.065))

    def test_full_cov(self):
        cov = np.array([[1.0, 0.6], [0.6, 0.5]])
        s = GaussianSampler(2, 0)
        draws = np.array([sample_gaussian_vec(s, np.zeros(2), cov) for _ in range(100_000)])
        emp = np.cov(draws.T)
        assert np.linalg.norm(emp - cov) / np.linalg.norm(cov) < 0.03

    def test_mean_dimension_check(self):
        with pytest.raises(DimensionError):
            sample_gaussian_vec(GaussianSampler(0), np.zeros(2), np.eye(3))


class TestPsdFactor:
    def test_singular_psd(self):
        cov = np.array([[1.0, 1.0], [1.0, 1.0]])
        f = psd_factor(cov)
        np.testing.assert_allclose(f @ f.T, cov, atol=1e-9)

    def test_indefinite(self):
        with pytest.raises(FactorizationError):
            psd_factor(np.diag([1.0, -1.0]))

    def test_asymmetric(self):
        with pytest.raises(FactorizationError):
            psd_factor(np.array([[1.0, 0.5], [0.0, 1.0]]))
