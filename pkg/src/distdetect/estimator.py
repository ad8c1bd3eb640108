"""Single time-scale distributed estimator (one fusion exchange per step).

Each step has two barrier-synchronous phases. ``predict`` forms every
sensor's prior from its in-neighbours' posteriors only; ``correct`` applies
the local innovation with no communication at all.
"""

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np


@dataclass(frozen=True)
class EstimatorState:
    priors: np.ndarray      # (N, n)
    posteriors: np.ndarray  # (N, n)
    k: int = 0

    @classmethod
    def initial(cls, n_sensors, n_states, x0=None):
        post = np.zeros((n_sensors, n_states))
        if x0 is not None:
            post[:] = np.asarray(x0, dtype=float)
        return cls(priors=post.copy(), posteriors=post, k=0)


class ResidualRecord(NamedTuple):
    sensor: int
    step: int
    value: float


def _gain_blocks(gains):
    return np.asarray(getattr(gains, "blocks", gains), dtype=float)


def local_predict(a, weights, neighbour_posteriors):
    """Prior of one sensor from the posteriors it received this step."""
    fused = np.tensordot(np.asarray(weights, dtype=float), np.asarray(neighbour_posteriors), axes=1)
    return a @ fused


def predict(st, w, a):
    """Consensus phase; sensor ``i`` only sees rows ``j`` with ``w[i, j] != 0``."""
    priors = np.empty_like(st.posteriors)
    for i in range(w.shape[0]):
        nbrs = np.flatnonzero(w[i])
        priors[i] = local_predict(a, w[i, nbrs], st.posteriors[nbrs])
    return EstimatorState(priors=priors, posteriors=st.posteriors, k=st.k + 1)


def correct(st, gains, y, h_rows):
    """Innovation phase: ``post_i = prior_i + K_i H_i^T (y_i - H_i prior_i)``."""
    blocks = _gain_blocks(gains)
    h = np.atleast_2d(h_rows)
    post = np.empty_like(st.priors)
    for i in range(h.shape[0]):
        innov = y[i] - h[i] @ st.priors[i]
        post[i] = st.priors[i] + (blocks[i] @ h[i]) * innov
    return EstimatorState(priors=st.priors, posteriors=post, k=st.k)


def residual(st, y, h_rows):
    """Posterior residuals ``y_i - H_i xhat_{k|k}^i`` for all sensors."""
    h = np.atleast_2d(h_rows)
    return np.asarray(y, dtype=float) - np.einsum("ij,ij->i", h, st.posteriors)


def residual_records(st, y, h_rows):
    return [ResidualRecord(i, st.k, float(r)) for i, r in enumerate(residual(st, y, h_rows))]


def step(st, w, a, gains, y, h_rows):
    return correct(predict(st, w, a), gains, y, h_rows)


def error_trace(truth, posterior_history):
    """Per-sensor mean squared error ``||x_k - xhat_k^i||^2 / n``.

    ``truth`` is (steps, n); ``posterior_history`` is (steps, N, n).
    """
    truth = np.asarray(truth, dtype=float)
    hist = np.asarray(posterior_history, dtype=float)
    err = truth[:, None, :] - hist
    return np.mean(err**2, axis=2)
