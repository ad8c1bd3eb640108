"""Dense linear-algebra and sampling kernels.

Matrices are plain 2-D ``numpy`` float arrays; :func:`as_mat` is the
validation gate used at module boundaries.
"""

import math

import numpy as np

from .errors import (
    ConvergenceError,
    DimensionError,
    DivergenceError,
    FactorizationError,
)

DEFAULT_TOL = 1e-9
DEFAULT_MAX_ITER = 10_000
MAX_KRON_DIM = 20_000


def as_mat(a, name="matrix"):
    """Return ``a`` as a finite 2-D float array (scalars become 1x1)."""
    arr = np.array(a, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    if arr.ndim != 2 or arr.shape[0] == 0 or arr.shape[1] == 0:
        raise DimensionError(f"{name} must be a non-empty 2-D array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains NaN or Inf")
    return arr


def _as_square(a, name):
    arr = as_mat(a, name)
    if arr.shape[0] != arr.shape[1]:
        raise DimensionError(f"{name} must be square, got {arr.shape}")
    return arr


def kron(a, b, max_dim=MAX_KRON_DIM):
    """Kronecker product; block ``(i, j)`` of the result is ``a[i, j] * b``."""
    a = as_mat(a, "a")
    b = as_mat(b, "b")
    rows = a.shape[0] * b.shape[0]
    cols = a.shape[1] * b.shape[1]
    if max(rows, cols) > max_dim:
        raise DimensionError(f"kron result {rows}x{cols} exceeds max_dim={max_dim}")
    return np.kron(a, b)


def _eig_radius(a):
    return float(np.max(np.abs(np.linalg.eigvals(a))))


def spectral_radius(a, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER, method="auto"):
    """Largest eigenvalue modulus of a square matrix.

    ``method="auto"`` runs power iteration and, when no real dominant
    eigenpair emerges (complex or sign-alternating dominant pairs), falls
    back to Hessenberg/QR eigenvalues from LAPACK. ``method="power"`` never
    falls back and raises :class:`ConvergenceError` instead. ``method="eig"``
    skips power iteration.
    """
    a = _as_square(a, "a")
    if method not in ("auto", "power", "eig"):
        raise ValueError(f"unknown method {method!r}")
    if method == "eig":
        return _eig_radius(a)
    n = a.shape[0]
    if not np.any(a):
        return 0.0

    # power phase is capped in auto mode; LAPACK is cheaper than a long stall
    budget = max_iter if method == "power" else min(max_iter, 50 * n + 200)
    best = 0.0
    rng = np.random.default_rng(12345)
    for _restart in range(2):
        x = rng.standard_normal(n)
        x /= np.linalg.norm(x)
        lam = 0.0
        for _ in range(budget // 2):
            y = a @ x
            ny = np.linalg.norm(y)
            if ny == 0.0:
                break
            lam = float(x @ y)
            best = max(best, ny)
            resid = np.linalg.norm(y - lam * x)
            if resid <= tol * max(abs(lam), 1e-300):
                return abs(lam)
            x = y / ny
        if abs(lam) > 0:
            best = max(best, abs(lam))

    if method == "power":
        raise ConvergenceError("power iteration did not converge", best=best)
    return _eig_radius(a)


def two_norm(a, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER):
    """Largest singular value via power iteration on ``a.T @ a``."""
    a = as_mat(a, "a")
    if not np.any(a):
        return 0.0
    ata = a.T @ a
    n = ata.shape[0]
    x = np.random.default_rng(2024).standard_normal(n)
    x /= np.linalg.norm(x)
    lam_prev = -1.0
    for _ in range(max_iter):
        y = ata @ x
        ny = np.linalg.norm(y)
        if ny == 0.0:
            return 0.0
        lam = float(x @ y)
        if abs(lam - lam_prev) <= tol * 1e-2 * lam:
            return math.sqrt(max(lam, 0.0))
        lam_prev = lam
        x = y / ny
    raise ConvergenceError("two_norm power iteration did not converge",
                           best=math.sqrt(max(lam_prev, 0.0)))


def solve_discrete_lyapunov(abar, sigma, tol=1e-10, max_iter=100):
    """Steady state of ``X = abar X abar^T + sigma`` by the doubling iteration.

    Each sweep doubles the number of summed series terms, so convergence is
    quadratic in the number of sweeps for any contraction.
    """
    abar = _as_square(abar, "abar")
    sigma = _as_square(sigma, "sigma")
    if abar.shape != sigma.shape:
        raise DimensionError(f"abar {abar.shape} and sigma {sigma.shape} differ")
    rho = spectral_radius(abar, method="eig")
    if rho >= 1.0:
        raise DivergenceError(f"spectral radius {rho:.6g} >= 1; Lyapunov series diverges")

    x = 0.5 * (sigma + sigma.T)
    ak = abar.copy()
    for _ in range(max_iter):
        inc = ak @ x @ ak.T
        x = x + inc
        ak = ak @ ak
        if np.linalg.norm(inc, 2) <= 1e-3 * tol * max(1.0, np.linalg.norm(x, 2)):
            break
    x = 0.5 * (x + x.T)
    resid = np.linalg.norm(x - abar @ x @ abar.T - sigma, 2)
    if resid >= tol * max(1.0, np.linalg.norm(x, 2)):
        raise ConvergenceError(f"Lyapunov residual {resid:.3g} above tolerance", best=x)
    return x


def psd_factor(cov, jitter=1e-12):
    """Lower factor ``L`` with ``L @ L.T ~= cov`` for a PSD matrix.

    Tries plain Cholesky, then Cholesky with ``jitter * trace`` on the
    diagonal, then a clipped eigendecomposition for singular PSD input.
    """
    cov = _as_square(cov, "cov")
    if not np.allclose(cov, cov.T, atol=1e-12, rtol=1e-9):
        raise FactorizationError("covariance is not symmetric")
    if not np.any(cov):
        return np.zeros_like(cov)
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        pass
    eye = np.eye(cov.shape[0])
    try:
        return np.linalg.cholesky(cov + jitter * np.trace(cov) * eye)
    except np.linalg.LinAlgError:
        pass
    vals, vecs = np.linalg.eigh(cov)
    if vals.min() < -1e-9 * max(1.0, abs(vals).max()):
        raise FactorizationError(f"covariance not PSD (min eigenvalue {vals.min():.3g})")
    return vecs * np.sqrt(np.clip(vals, 0.0, None))


class GaussianSampler:
    """Seeded stream of standard normals built from uniforms by Box-Muller.

    Samplers with the same ``(seed, stream_id)`` produce identical
    sequences; distinct stream ids give independent streams.
    """

    def __init__(self, seed=0, stream_id=0):
        if seed < 0 or stream_id < 0:
            raise ValueError("seed and stream_id must be non-negative")
        self.seed = int(seed)
        self.stream_id = int(stream_id)
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.stream_id,))
        self._rng = np.random.Generator(np.random.PCG64(ss))

    def __repr__(self):
        return f"GaussianSampler(seed={self.seed}, stream_id={self.stream_id})"

    def uniform(self, low=0.0, high=1.0, size=None):
        return self._rng.uniform(low, high, size)

    def standard_normal(self, size):
        m = (size + 1) // 2
        u1 = 1.0 - self._rng.random(m)  # (0, 1], keeps log finite
        u2 = self._rng.random(m)
        rad = np.sqrt(-2.0 * np.log(u1))
        z = np.concatenate([rad * np.cos(2 * np.pi * u2), rad * np.sin(2 * np.pi * u2)])
        return z[:size]

    def normal(self, mean=0.0, std=1.0):
        return mean + std * float(self.standard_normal(1)[0])

    def correlated(self, mean, factor):
        """``mean + factor @ w`` for a precomputed factor (see :func:`psd_factor`)."""
        mean = np.asarray(mean, dtype=float)
        return mean + factor @ self.standard_normal(factor.shape[1])


def sample_gaussian_vec(sampler, mean, cov):
    mean = np.asarray(mean, dtype=float).ravel()
    cov = _as_square(cov, "cov")
    if cov.shape[0] != mean.size:
        raise DimensionError(f"mean length {mean.size} does not match cov {cov.shape}")
    return sampler.correlated(mean, psd_factor(cov))
