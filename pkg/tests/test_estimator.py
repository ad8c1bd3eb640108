import numpy as np
import pytest

from distdetect import estimator as est
from distdetect.chidetect import compute_variance_bound
from distdetect.gainsynth import GainSet
from distdetect.matcore import GaussianSampler
from distdetect.netgraph import block_diag_dh, block_diag_dh_bar

from conftest import random_stable_instance


def run_filter(a, w, h, gains, steps, seed, q_std=np.sqrt(0.06), r_std=np.sqrt(0.06), attack=None):
    """Per-sensor estimator on a simulated truth; returns errors and residuals.

    Works in a frame that follows the noise-free trajectory, so errors stay
    exact even when ``A`` is unstable.
    """
    rng = np.random.default_rng(seed)
    n, n_sensors = a.shape[0], h.shape[0]
    x0 = rng.normal(size=n)
    st = est.EstimatorState(priors=-np.tile(x0, (n_sensors, 1)), posteriors=-np.tile(x0, (n_sensors, 1)))
    errs = np.empty((steps, n_sensors, n))
    res = np.empty((steps, n_sensors))
    for k in range(steps):
        x = q_std * rng.normal(size=n)
        y = h @ x + r_std * rng.normal(size=n_sensors)
        if attack is not None:
            y = y + attack(k, rng)
        st = est.step(st, w, a, gains, y, h)
        errs[k] = x - st.posteriors
        res[k] = est.residual(st, y, h)
        st = est.EstimatorState(priors=st.priors - x, posteriors=st.posteriors - x, k=st.k)
    return errs, res


class TestPredict:
    def test_single_sensor(self, rng):
        a = rng.normal(size=(3, 3))
        post = rng.normal(size=(1, 3))
        st = est.predict(est.EstimatorState(priors=post, posteriors=post), np.eye(1), a)
        np.testing.assert_allclose(st.priors[0], a @ post[0])

    def test_consensus_fixed_point(self, rng):
        a, w, *_ = random_stable_instance(1)
        v = rng.normal(size=3)
        post = np.tile(v, (3, 1))
        st = est.predict(est.EstimatorState(priors=post, posteriors=post), w, a)
        np.testing.assert_allclose(st.priors, np.tile(a @ v, (3, 1)), atol=1e-14)

    @pytest.mark.parametrize("seed", range(3))
    def test_kronecker_form(self, seed):
        a, w, *_ = random_stable_instance(seed)
        post = np.random.default_rng(seed).normal(size=(3, 3))
        st = est.predict(est.EstimatorState(priors=post, posteriors=post), w, a)
        np.testing.assert_allclose(st.priors.ravel(), np.kron(w, a) @ post.ravel(), atol=1e-13)

    def test_only_neighbours_read(self, rng):
        a, w, *_ = random_stable_instance(2)
        post = rng.normal(size=(3, 3))
        base = est.predict(est.EstimatorState(priors=post, posteriors=post), w, a).priors
        # poison a posterior that sensor 0 does not receive
        stranger = int(np.flatnonzero(w[0] == 0)[0])
        poisoned = post.copy()
        poisoned[stranger] = np.nan
        got = est.predict(est.EstimatorState(priors=poisoned, posteriors=poisoned), w, a).priors
        np.testing.assert_array_equal(got[0], base[0])

    def test_step_counter(self):
        st = est.EstimatorState.initial(2, 2)
        assert est.step(st, np.eye(2), np.eye(2), np.zeros((2, 2, 2)), np.zeros(2), np.eye(2)).k == 1


class TestCorrect:
    def test_zero_innovation(self, rng):
        h = np.eye(3)
        prior = rng.normal(size=(3, 3))
        st = est.EstimatorState(priors=prior, posteriors=prior)
        y = np.einsum("ij,ij->i", h, prior)
        out = est.correct(st, rng.normal(size=(3, 3, 3)), y, h)
        np.testing.assert_allclose(out.posteriors, prior)

    def test_zero_gain(self, rng):
        prior = rng.normal(size=(2, 3))
        st = est.EstimatorState(priors=prior, posteriors=prior)
        out = est.correct(st, np.zeros((2, 3, 3)), rng.normal(size=2), np.eye(3)[:2])
        np.testing.assert_array_equal(out.posteriors, prior)

    def test_scalar_closed_form(self):
        st = est.EstimatorState(priors=np.array([[2.0]]), posteriors=np.zeros((1, 1)))
        out = est.correct(st, GainSet(np.array([[[0.3]]]), 0.2), np.array([5.0]), [[1.0]])
        assert out.posteriors[0, 0] == pytest.approx(2.0 + 0.3 * 3.0)


class TestResidual:
    def test_perfect_estimate(self):
        x = np.array([1.0, -2.0, 0.5])
        h = np.eye(3)[[0, 2]]
        st = est.EstimatorState(priors=np.tile(x, (2, 1)), posteriors=np.tile(x, (2, 1)))
        np.testing.assert_array_equal(est.residual(st, h @ x, h), 0.0)

    def test_bias_shift(self):
        x = np.array([1.0, -2.0])
        h = np.eye(2)
        st = est.correct(est.EstimatorState(priors=np.tile(x, (2, 1)), posteriors=np.zeros((2, 2))),
                         np.zeros((2, 2, 2)), h @ x + [0.0, 0.4], h)
        np.testing.assert_allclose(est.residual(st, h @ x + [0.0, 0.4], h), [0.0, 0.4])

    def test_records(self):
        st = est.EstimatorState(priors=np.zeros((2, 1)), posteriors=np.zeros((2, 1)), k=4)
        recs = est.residual_records(st, np.array([1.0, 2.0]), [[1.0], [1.0]])
        assert recs == [est.ResidualRecord(0, 4, 1.0), est.ResidualRecord(1, 4, 2.0)]

    def test_variance_below_bound(self):
        a, w, h, gains, abar = random_stable_instance(0)
        lam = compute_variance_bound(abar, gains.matrix(), h, 0.06 * np.eye(3), np.full(3, 0.06),
                                     method="lyapunov-exact").lambdas
        _, res = run_filter(a, w, h, gains, 20_000, seed=0)
        assert np.all(res[500:].var(axis=0) <= lam)


class TestStackedForm:
    @pytest.mark.parametrize("seed", range(3))
    def test_error_recursion(self, seed):
        a, w, h, gains, abar = random_stable_instance(seed, kappa=0.4, rho_a=1.1)
        rng = np.random.default_rng(seed)
        n, n_sensors = 3, 3
        k_mat = gains.matrix()
        g = np.eye(n * n_sensors) - k_mat @ block_diag_dh(h)
        kd = k_mat @ block_diag_dh_bar(h)
        x = rng.normal(size=n)
        st = est.EstimatorState.initial(n_sensors, n)
        e = np.tile(x, n_sensors)
        for _ in range(100):
            nu, eta = 0.2 * rng.normal(size=n), 0.2 * rng.normal(size=n_sensors)
            x = a @ x + nu
            st = est.step(st, w, a, gains, h @ x + eta, h)
            e = abar @ e + g @ np.tile(nu, n_sensors) - kd @ eta
            np.testing.assert_allclose((x - st.posteriors).ravel(), e, atol=1e-10)


class TestErrorTrace:
    def test_starts_at_truth_no_noise(self):
        a, w, h, gains, _ = random_stable_instance(3)
        x = np.array([1.0, 2.0, -1.0])
        st = est.EstimatorState.initial(3, 3, x0=x)
        truth, hist = [], []
        for _ in range(50):
            x = a @ x
            st = est.step(st, w, a, gains, h @ x, h)
            truth.append(x)
            hist.append(st.posteriors)
        np.testing.assert_allclose(est.error_trace(truth, hist), 0.0, atol=1e-28)

    def test_bounded_when_stable(self):
        a, w, h, gains, abar = random_stable_instance(4, kappa=0.5, rho_a=1.1)
        assert np.max(np.abs(np.linalg.eigvals(abar))) < 1
        errs, _ = run_filter(a, w, h, gains, 1000, seed=4)
        mse = np.mean(errs**2, axis=2)
        assert mse[-200:].max() < 10 * np.median(mse[-200:])

    def test_diverges_without_gain(self):
        a, w, h, _, _ = random_stable_instance(5, rho_a=1.1)
        errs, _ = run_filter(a, w, h, np.zeros((3, 3, 3)), 300, seed=5)
        mse = np.mean(errs**2, axis=2).mean(axis=1)
        blocks = mse.reshape(-1, 50).mean(axis=1)
        assert np.all(np.diff(blocks) > 0)
        assert blocks[-1] > 1e3 * blocks[0]


class TestIsolation:
    def test_other_sensors_unbiased(self):
        """Attack at sensor 0 leaves mean |r_j| of other sensors within 3 s.e."""
        a, w, h, gains, _ = random_stable_instance(6, kappa=0.5)
        reps = 40
        base_m, hit_m, z0_base, z0_hit = [], [], [], []
        for rep in range(reps):
            _, rb = run_filter(a, w, h, gains, 400, seed=1000 + rep)
            _, ra = run_filter(a, w, h, gains, 400, seed=1000 + rep,
                               attack=lambda k, rng: np.array([0.5 * np.sin(k), 0.0, 0.0]))
            base_m.append(np.abs(rb[100:, 1:]).mean(axis=0))
            hit_m.append(np.abs(ra[100:, 1:]).mean(axis=0))
            z0_base.append(np.mean(rb[100:, 0] ** 2))
            z0_hit.append(np.mean(ra[100:, 0] ** 2))
        base_m, hit_m = np.array(base_m), np.array(hit_m)
        se = np.sqrt(base_m.var(axis=0, ddof=1) / reps + hit_m.var(axis=0, ddof=1) / reps)
        assert np.all(np.abs(hit_m.mean(axis=0) - base_m.mean(axis=0)) < 3 * se)
        assert np.mean(z0_hit) > 1.5 * np.mean(z0_base)
