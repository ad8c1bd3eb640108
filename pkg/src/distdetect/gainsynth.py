"""Block-diagonal gain synthesis under the attack-isolation margin.

Only the column ``K_i H_i^T`` of each block enters the estimator and the
error dynamics, so the search runs over those N gain columns and leaves
the remaining block entries at zero (which also keeps ``||K||_2`` small).
"""

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import block_diag

from .errors import DimensionError, InfeasibleGainError
from .matcore import GaussianSampler, as_mat, kron, spectral_radius
from .netgraph import block_diag_dh


@dataclass
class GainSet:
    blocks: np.ndarray          # (N, n, n)
    c_floor: float
    achieved_rho: float = float("nan")
    margins: np.ndarray = None
    seed: int = None
    evaluations: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def n_sensors(self):
        return self.blocks.shape[0]

    def matrix(self):
        """Assembled ``K = diag[K_i]``."""
        return block_diag(*self.blocks)

    @property
    def success(self):
        return bool(self.achieved_rho < 1.0 and np.all(self.margins > self.c_floor))

    def to_json(self):
        return {
            "c_floor": self.c_floor,
            "seed": self.seed,
            "achieved_rho": self.achieved_rho,
            "margins": [float(m) for m in self.margins] if self.margins is not None else None,
            "blocks": self.blocks.tolist(),
        }


def assemble_abar(a, w, h_rows, gains):
    """Error-dynamics matrix ``(I - K D_H)(W kron A)``."""
    a = as_mat(a, "a")
    w = as_mat(w, "w")
    k = gains.matrix() if isinstance(gains, GainSet) else np.asarray(gains, dtype=float)
    if k.ndim == 3:
        k = block_diag(*k)
    m = kron(w, a)
    dh = block_diag_dh(h_rows)
    if k.shape != m.shape:
        raise DimensionError(f"gain is {k.shape}, expected {m.shape}")
    return m - k @ dh @ m


def isolation_margins(blocks, h_rows):
    """``|1 - H_i K_i H_i^T|`` per sensor."""
    h = np.atleast_2d(h_rows)
    return np.array([abs(1.0 - h[i] @ blocks[i] @ h[i]) for i in range(h.shape[0])])


def _blocks_from_columns(cols, h):
    norms = np.einsum("ij,ij->i", h, h)
    return np.einsum("ij,ik->ijk", cols, h) / norms[:, None, None]


def _finish(blocks, a, w, h, c_floor, seed, evaluations, meta=None):
    gs = GainSet(blocks=blocks, c_floor=float(c_floor), seed=seed, evaluations=evaluations,
                 meta=meta or {})
    gs.achieved_rho = spectral_radius(assemble_abar(a, w, h, gs))
    gs.margins = isolation_margins(blocks, h)
    return gs


def synthesize_gain(a, w, h_rows, c_floor=0.2, budget=20_000, seed=0,
                    rho_target=0.99, penalty=100.0, step0=0.5):
    """Seeded derivative-free search for a stabilising block-diagonal gain.

    Stage 1 grids a common scalar ``kappa`` in [0, 1] with
    ``K_i H_i^T = kappa H_i^T``. Stage 2 runs randomized coordinate descent
    on the gain columns, minimising
    ``rho(Abar) + penalty * sum(max(0, c_floor - margin_i)**2)`` (plus a unit
    offset on margin-violating points) with a geometrically decaying step. Returns on the first point with
    ``rho < rho_target`` and all margins strictly above ``c_floor``.

    Raises :class:`InfeasibleGainError` when ``budget`` objective
    evaluations pass without success; ``report`` holds the best point.
    """
    a = as_mat(a, "a")
    w = as_mat(w, "w")
    h = np.atleast_2d(np.asarray(h_rows, dtype=float))
    n_sensors, n = h.shape
    if w.shape != (n_sensors, n_sensors) or a.shape != (n, n):
        raise DimensionError("a, w and h_rows do not conform")

    m = kron(w, a)
    # row block i of (K D_H M) is outer(g_i, h_i @ M_i)
    c = np.stack([h[i] @ m[i * n:(i + 1) * n] for i in range(n_sensors)])
    hh = np.einsum("ij,ij->i", h, h)
    c_eff = c_floor + 1e-9
    evals = 0

    def objective(cols):
        nonlocal evals
        evals += 1
        abar = m - np.concatenate([np.outer(cols[i], c[i]) for i in range(n_sensors)])
        rho = float(np.max(np.abs(np.linalg.eigvals(abar))))
        margins = np.abs(1.0 - np.einsum("ij,ij->i", h, cols))
        viol = np.clip(c_eff - margins, 0.0, None)
        ok = bool(np.all(margins > c_floor))
        # the unit offset ranks every feasible point ahead of every infeasible one
        return rho + penalty * float(viol @ viol) + (0.0 if ok else 1.0), rho, ok

    def done(rho, ok):
        return ok and rho < rho_target

    best_cols, best = None, None
    for kappa in np.linspace(0.0, 1.0, 101):
        cols = kappa * h / hh[:, None]
        f, rho, ok = objective(cols)
        if best is None or f < best[0]:
            best_cols, best = cols, (f, rho, ok)
    meta = {"stage1_kappa_rho": best[1]}
    if done(best[1], best[2]):
        return _finish(_blocks_from_columns(best_cols, h), a, w, h, c_floor, seed, evals, meta)

    sampler = GaussianSampler(seed, stream_id=7)
    cols = best_cols.copy()
    f_cur = best[0]
    step = step0
    fails = 0
    n_coords = n_sensors * n
    while evals < budget:
        idx = int(sampler.uniform(0, n_coords))
        i, j = divmod(min(idx, n_coords - 1), n)
        sign = 1.0 if sampler.uniform() < 0.5 else -1.0
        improved = False
        for s in (sign, -sign):
            trial = cols.copy()
            trial[i, j] += s * step
            f, rho, ok = objective(trial)
            if f < f_cur:
                cols, f_cur, best = trial, f, (f, rho, ok)
                improved = True
                if done(rho, ok):
                    meta["final_step"] = step
                    return _finish(_blocks_from_columns(cols, h), a, w, h, c_floor, seed, evals, meta)
                break
            if evals >= budget:
                break
        if improved:
            fails = 0
            continue
        fails += 1
        if fails >= n_coords:
            fails = 0
            step *= 0.5
            if step < 1e-6:
                step = step0 * 0.25

    margins = np.abs(1.0 - np.einsum("ij,ij->i", h, cols))
    report = {
        "best_rho": best[1],
        "evaluations": evals,
        "margins": margins.tolist(),
        "margin_violations": [i for i, mg in enumerate(margins) if not mg > c_floor],
        "rho_target": rho_target,
    }
    raise InfeasibleGainError(
        f"no stabilising gain with margins > {c_floor} within {budget} evaluations "
        f"(best rho {best[1]:.4f})",
        report=report,
    )


def save_gain(gains, path):
    with open(path, "w") as fh:
        json.dump(gains.to_json(), fh, indent=1)


def load_gain(path, a, w, h_rows):
    """Read a gain file and recompute radius and margins for this instance."""
    with open(path) as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValueError(f"cannot parse gain file {path}: {exc}") from exc
    a = as_mat(a, "a")
    h = np.atleast_2d(np.asarray(h_rows, dtype=float))
    blocks = np.asarray(obj["blocks"], dtype=float)
    n_sensors, n = h.shape
    if blocks.shape != (n_sensors, n, n):
        raise DimensionError(f"gain file has blocks of shape {blocks.shape}, expected {(n_sensors, n, n)}")
    return _finish(blocks, a, w, h, float(obj.get("c_floor", 0.0)), obj.get("seed"), 0)
