"""Per-sensor windowed chi-square detection.

A sensor normalises its squared residual by the attack-free variance
``Lambda_i``, sums the last ``T`` values, and flags an attack when the sum
reaches the threshold tied to a false-alarm rate ``p``.
"""

import math
from collections import deque
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import BoundInapplicableError
from .matcore import solve_discrete_lyapunov, two_norm
from .netgraph import block_diag_dh, block_diag_dh_bar

LAMBDA_FLOOR = 1e-12
PAPER_BOUND = "paper-bound"
LYAPUNOV = "lyapunov-exact"
RESIDUAL_EXACT = "residual-exact"


@dataclass
class VarianceBound:
    phi: float
    lambdas: np.ndarray
    b: float
    method: str
    a1: float = float("nan")
    a2: float = float("nan")
    a3: float = float("nan")
    xi: np.ndarray = field(default=None, repr=False)

    def to_json(self):
        return {
            "method": self.method,
            "phi": self.phi,
            "lambda": [float(x) for x in self.lambdas],
            "b": self.b,
            "a1": self.a1,
            "a2": self.a2,
            "a3": self.a3,
        }


def _lambdas(blocks_var, h, r):
    lam = np.array([h[i] @ blocks_var[i] @ h[i] + r[i] for i in range(h.shape[0])])
    return np.maximum(lam, LAMBDA_FLOOR)


def compute_phi_paper_bound(abar, k, h_rows, q, r):
    """Norm bound ``Phi = (a1 N ||Q|| + a2 a3 ||R||) / (N (1 - b^2))``.

    Raises :class:`BoundInapplicableError` when ``b = ||abar||_2 >= 1``.
    """
    h = np.atleast_2d(np.asarray(h_rows, dtype=float))
    r = np.asarray(r, dtype=float).ravel()
    n_sensors, n = h.shape
    b = two_norm(abar)
    if b >= 1.0:
        raise BoundInapplicableError(f"||Abar||_2 = {b:.4f} >= 1, norm bound undefined", b=b)
    k = np.asarray(k, dtype=float)
    dh = block_diag_dh(h)
    a1 = two_norm(np.eye(n_sensors * n) - k @ dh) ** 2
    a2 = two_norm(k) ** 2
    r_norm = float(np.max(r))
    r_bar = np.zeros((n_sensors * n, n_sensors * n))
    for i in range(n_sensors):
        r_bar[i * n:(i + 1) * n, i * n:(i + 1) * n] = r[i] * np.outer(h[i], h[i])
    a3 = two_norm(r_bar) / r_norm
    q_norm = two_norm(q)
    phi = (a1 * n_sensors * q_norm + a2 * a3 * r_norm) / (n_sensors * (1.0 - b**2))
    lam = _lambdas([phi * np.eye(n)] * n_sensors, h, r)
    return VarianceBound(phi=phi, lambdas=lam, b=b, method=PAPER_BOUND, a1=a1, a2=a2, a3=a3)


def noise_covariance(k, h_rows, q, r):
    """Attack-free covariance of the stacked error-noise term.

    ``(I - K D_H)(1_NN kron Q)(I - K D_H)^T + (K Dbar_H) R (K Dbar_H)^T``
    """
    h = np.atleast_2d(np.asarray(h_rows, dtype=float))
    n_sensors, n = h.shape
    k = np.asarray(k, dtype=float)
    g = np.eye(n_sensors * n) - k @ block_diag_dh(h)
    kd = k @ block_diag_dh_bar(h)
    sigma = g @ np.kron(np.ones((n_sensors, n_sensors)), q) @ g.T + kd @ np.diag(r) @ kd.T
    return 0.5 * (sigma + sigma.T)


def compute_phi_lyapunov(abar, sigma, h_rows, r):
    """Exact steady-state error covariance; ``Lambda_i`` from its diagonal blocks."""
    h = np.atleast_2d(np.asarray(h_rows, dtype=float))
    r = np.asarray(r, dtype=float).ravel()
    n_sensors, n = h.shape
    xi = solve_discrete_lyapunov(abar, sigma)
    blocks = [xi[i * n:(i + 1) * n, i * n:(i + 1) * n] for i in range(n_sensors)]
    return VarianceBound(
        phi=float(np.linalg.norm(xi, 2)) / n_sensors,
        lambdas=_lambdas(blocks, h, r),
        b=float(np.linalg.norm(abar, 2)),
        method=LYAPUNOV,
        xi=xi,
    )


def compute_residual_variance(abar, k, h_rows, q, r):
    """Exact attack-free variance of the posterior residual.

    The posterior error carries ``-K_i H_i^T eta_i``, so the residual
    variance is ``H_i Xi_ii H_i^T + R_i - 2 (H_i K_i H_i^T) R_i``; the
    ``lyapunov-exact`` bound drops the last term.
    """
    h = np.atleast_2d(np.asarray(h_rows, dtype=float))
    r = np.asarray(r, dtype=float).ravel()
    n = h.shape[1]
    vb = compute_phi_lyapunov(abar, noise_covariance(k, h_rows, q, r), h, r)
    k = np.asarray(k, dtype=float)
    kappa = np.array([h[i] @ k[i * n:(i + 1) * n, i * n:(i + 1) * n] @ h[i] for i in range(h.shape[0])])
    vb.lambdas = np.maximum(vb.lambdas - 2.0 * kappa * r, LAMBDA_FLOOR)
    vb.method = RESIDUAL_EXACT
    return vb


def compute_variance_bound(abar, k, h_rows, q, r, method="auto"):
    """Dispatch on ``method``; ``auto`` prefers the norm bound and falls back
    to the Lyapunov solution when the bound is undefined."""
    if method not in ("auto", PAPER_BOUND, LYAPUNOV, RESIDUAL_EXACT):
        raise ValueError(f"unknown variance method {method!r}")
    if method == RESIDUAL_EXACT:
        return compute_residual_variance(abar, k, h_rows, q, r)
    if method != LYAPUNOV:
        try:
            return compute_phi_paper_bound(abar, k, h_rows, q, r)
        except BoundInapplicableError:
            if method == PAPER_BOUND:
                raise
    return compute_phi_lyapunov(abar, noise_covariance(k, h_rows, q, r), h_rows, r)


def _gamma_series(a, x):
    term = 1.0 / a
    total = term
    ap = a
    for _ in range(100_000):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * 1e-17:
            break
    return total * math.exp(-x + a * math.log(x) - math.lgamma(a))


def _gamma_cf(a, x):
    # modified Lentz for the upper incomplete gamma continued fraction
    tiny = 1e-300
    b = x + 1.0 - a
    c = 1.0 / tiny
    d = 1.0 / b
    h = d
    for i in range(1, 100_000):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < tiny:
            d = tiny
        c = b + an / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-17:
            break
    return math.exp(-x + a * math.log(x) - math.lgamma(a)) * h


def reg_lower_gamma(a, x):
    """Regularized lower incomplete gamma ``P(a, x)``."""
    if a <= 0:
        raise ValueError("a must be positive")
    if x < 0:
        raise ValueError("x must be non-negative")
    if x == 0:
        return 0.0
    if math.isinf(x):
        return 1.0
    if x < a + 1.0:
        return min(1.0, _gamma_series(a, x))
    return max(0.0, 1.0 - _gamma_cf(a, x))


def chi2_cdf(x, dof):
    return reg_lower_gamma(dof / 2.0, x / 2.0)


@lru_cache(maxsize=256)
def threshold_from_far(p, window):
    """Decision threshold ``theta`` with ``P(T/2, theta/2) = 1 - p``.

    Bisection brackets the root, Newton polishes it.
    """
    if not 0.0 < p < 1.0:
        raise ValueError("false-alarm rate must lie in (0, 1)")
    if window < 1:
        raise ValueError("window length must be >= 1")
    a = window / 2.0
    target = 1.0 - p

    def f(theta):
        return reg_lower_gamma(a, theta / 2.0) - target

    lo, hi = 0.0, max(1.0, float(window))
    while f(hi) < 0:
        lo, hi = hi, 2.0 * hi
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if f(mid) < 0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-6 * max(hi, 1e-12):
            break
    theta = 0.5 * (lo + hi)
    log_norm = math.lgamma(a) + a * math.log(2.0)
    for _ in range(50):
        err = f(theta)
        if abs(err) < 1e-14:
            break
        dens = math.exp((a - 1.0) * math.log(theta) - theta / 2.0 - log_norm)
        nxt = theta - err / dens
        if not lo <= nxt <= hi:
            break
        theta = nxt
    return theta


def threshold_table(fars, window):
    return [{"p": float(p), "T": int(window), "theta": threshold_from_far(float(p), int(window))}
            for p in fars]


@dataclass
class Verdict:
    sensor: int
    step: int
    v: float
    attack: tuple        # one bool per threshold, True = H1
    thresholds: tuple    # matching (p, theta) pairs

    @property
    def hypotheses(self):
        return tuple("H1" if hit else "H0" for hit in self.attack)


class DetectorState:
    """Sliding window of distance measures for one sensor."""

    def __init__(self, window, fars=(), sensor=0):
        if window < 1:
            raise ValueError("window length must be >= 1")
        self.window = int(window)
        self.sensor = sensor
        self.thresholds = tuple((float(p), threshold_from_far(float(p), self.window)) for p in fars)
        self.buffer = deque(maxlen=self.window)
        self.v = 0.0
        self.step = 0

    @property
    def warm(self):
        return len(self.buffer) == self.window


def update_distance(ds, r, lambda_i):
    """Push ``z = r^2 / lambda_i`` and return ``(z, v)`` with ``v`` the window sum."""
    if not lambda_i > 0:
        raise ValueError("lambda_i must be positive")
    z = float(r) ** 2 / float(lambda_i)
    ds.buffer.append(z)
    ds.v = sum(ds.buffer)
    ds.step += 1
    return z, ds.v


def decide(ds):
    """H1 for every threshold with ``v >= theta``; requires a full window."""
    if not ds.warm:
        raise RuntimeError(f"window not warm yet ({len(ds.buffer)}/{ds.window} samples)")
    return Verdict(
        sensor=ds.sensor,
        step=ds.step,
        v=ds.v,
        attack=tuple(ds.v >= theta for _, theta in ds.thresholds),
        thresholds=ds.thresholds,
    )
