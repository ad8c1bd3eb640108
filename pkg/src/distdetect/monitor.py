"""scikit-learn style front ends.

:class:`WindowedChiSquareDetector` turns a residual matrix (steps x sensors)
into distance measures and verdicts. :class:`DistributedChiSquareMonitor`
wraps the whole pipeline: ``fit`` designs the gain and the variance bound,
``transform`` runs the distributed estimator over a measurement matrix,
and ``predict`` returns the per-sensor hypotheses.
"""

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from . import estimator as est
from .chidetect import DetectorState, compute_variance_bound, decide, threshold_from_far, update_distance
from .gainsynth import GainSet, assemble_abar, isolation_margins, synthesize_gain
from .matcore import as_mat, spectral_radius
from .netgraph import block_diag_dh, verify_distributed_observability

WARMUP = -1


class WindowedChiSquareDetector(BaseEstimator):
    """Sliding-window chi-square test on per-sensor residual streams.

    Parameters
    ----------
    lambdas : float or array of shape (n_sensors,)
        Attack-free residual variances used to normalise squared residuals.
    window : int
        Window length ``T``.
    fars : sequence of float
        False-alarm rates; one threshold is derived per rate.
    """

    def __init__(self, lambdas=1.0, window=12, fars=(0.05, 0.35)):
        self.lambdas = lambdas
        self.window = window
        self.fars = fars

    def fit(self, X=None, y=None):
        if int(self.window) < 1:
            raise ValueError("window must be >= 1")
        fars = tuple(float(p) for p in self.fars)
        self.thresholds_ = np.array([threshold_from_far(p, int(self.window)) for p in fars])
        lam = np.atleast_1d(np.asarray(self.lambdas, dtype=float))
        if np.any(lam <= 0):
            raise ValueError("lambdas must be positive")
        if X is not None:
            X = check_array(X)
            self.n_features_in_ = X.shape[1]
            lam = np.broadcast_to(lam, (X.shape[1],)).copy()
        self.lambdas_ = lam
        return self

    def _lambdas_for(self, n_sensors):
        if self.lambdas_.size == 1:
            return np.full(n_sensors, float(self.lambdas_[0]))
        if self.lambdas_.size != n_sensors:
            raise ValueError(f"detector fitted for {self.lambdas_.size} sensors, got {n_sensors}")
        return self.lambdas_

    def iter_verdicts(self, X, first_step=1):
        """Yield ``(step, sensor, z, v, flags)`` for every warm window.

        This is the single detection engine behind ``predict``, the CLI and
        the trace writer, so online and offline verdicts coincide.
        """
        check_is_fitted(self, "thresholds_")
        X = check_array(X, ensure_min_samples=1)
        lam = self._lambdas_for(X.shape[1])
        states = [DetectorState(int(self.window), self.fars, sensor=i) for i in range(X.shape[1])]
        for t in range(X.shape[0]):
            for i, ds in enumerate(states):
                z, v = update_distance(ds, X[t, i], lam[i])
                if ds.warm:
                    yield first_step + t, i, z, v, decide(ds).attack

    def decision_function(self, X):
        """Window sums ``v``; NaN until the window is full."""
        check_is_fitted(self, "thresholds_")
        X = check_array(X)
        out = np.full(X.shape, np.nan)
        for step, i, _, v, _ in self.iter_verdicts(X, first_step=0):
            out[step, i] = v
        return out

    def predict(self, X):
        """Array (steps, sensors, thresholds): 1 = H1, 0 = H0, -1 = warm-up."""
        check_is_fitted(self, "thresholds_")
        X = check_array(X)
        out = np.full(X.shape + (len(self.thresholds_),), WARMUP, dtype=np.int8)
        for step, i, _, _, flags in self.iter_verdicts(X, first_step=0):
            out[step, i] = flags
        return out


class DistributedChiSquareMonitor(TransformerMixin, BaseEstimator):
    """Distributed estimation with local chi-square attack detection.

    ``fit`` needs no data: it checks distributed observability, designs the
    block-diagonal gain (unless ``gains`` is given) and derives the
    attack-free residual variances. ``transform`` and ``predict`` take a
    measurement matrix ``Y`` of shape (steps, sensors), one row per time
    step starting at ``k = 1``, with all estimates initialised at zero.
    """

    def __init__(self, a=None, w=None, h=None, q=None, r=None, c_floor=0.2,
                 window=12, fars=(0.05, 0.35), variance_method="auto",
                 budget=20_000, rho_target=0.99, gains=None, random_state=0,
                 check_observability=True):
        self.a = a
        self.w = w
        self.h = h
        self.q = q
        self.r = r
        self.c_floor = c_floor
        self.window = window
        self.fars = fars
        self.variance_method = variance_method
        self.budget = budget
        self.rho_target = rho_target
        self.gains = gains
        self.random_state = random_state
        self.check_observability = check_observability

    def fit(self, X=None, y=None):
        a = as_mat(self.a, "a")
        w = as_mat(self.w, "w")
        h = np.atleast_2d(np.asarray(self.h, dtype=float))
        n = a.shape[0]
        n_sensors = h.shape[0]
        if h.shape[1] != n or w.shape != (n_sensors, n_sensors):
            raise ValueError("a, w and h do not conform")
        q = np.zeros((n, n)) if self.q is None else as_mat(self.q, "q")
        r = np.broadcast_to(np.asarray(self.r if self.r is not None else 1.0, dtype=float), (n_sensors,))
        if self.check_observability and n * n_sensors <= 60:
            if not verify_distributed_observability(a, w, block_diag_dh(h)):
                raise ValueError("(W kron A, D_H) is not observable")

        if self.gains is None:
            gains = synthesize_gain(a, w, h, c_floor=self.c_floor, budget=self.budget,
                                    seed=self.random_state, rho_target=self.rho_target)
        elif isinstance(self.gains, GainSet):
            gains = self.gains
        else:
            blocks = np.asarray(self.gains, dtype=float)
            gains = GainSet(blocks=blocks, c_floor=self.c_floor)
            gains.achieved_rho = spectral_radius(assemble_abar(a, w, h, gains))
            gains.margins = isolation_margins(blocks, h)

        self.gains_ = gains
        self.abar_ = assemble_abar(a, w, h, gains)
        self.variance_ = compute_variance_bound(self.abar_, gains.matrix(), h, q, r,
                                                method=self.variance_method)
        self.detector_ = WindowedChiSquareDetector(self.variance_.lambdas, self.window, self.fars).fit()
        self.thresholds_ = self.detector_.thresholds_
        self.n_features_in_ = n_sensors
        self._a, self._w, self._h = a, w, h
        return self

    def estimate(self, X):
        """Posterior history, shape (steps, sensors, states)."""
        check_is_fitted(self, "gains_")
        Y = check_array(X)
        if Y.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} sensors, got {Y.shape[1]}")
        st = est.EstimatorState.initial(*self._h.shape)
        hist = np.empty((Y.shape[0],) + self._h.shape)
        for t in range(Y.shape[0]):
            st = est.step(st, self._w, self._a, self.gains_, Y[t], self._h)
            hist[t] = st.posteriors
        return hist

    def transform(self, X):
        """Residuals ``y_k^i - H_i xhat_{k|k}^i``, shape (steps, sensors)."""
        post = self.estimate(X)
        Y = check_array(X)
        return Y - np.einsum("sj,tsj->ts", self._h, post)

    def decision_function(self, X):
        return self.detector_.decision_function(self.transform(X))

    def predict(self, X):
        return self.detector_.predict(self.transform(X))
