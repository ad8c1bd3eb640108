"""Ground-truth dynamics, sensor measurements, and attack injection."""

from dataclasses import dataclass, field

import numpy as np

from .matcore import as_mat, psd_factor, spectral_radius
from .netgraph import Digraph, is_structurally_full_rank


@dataclass
class SocialSystem:
    """``x_{k+1} = a x_k + nu_k`` with ``nu_k ~ N(0, q)``."""

    a: np.ndarray
    q: np.ndarray
    graph: Digraph = None

    def __post_init__(self):
        self.a = as_mat(self.a, "a")
        self.q = as_mat(self.q, "q")
        n = self.a.shape[0]
        if self.a.shape != (n, n) or self.q.shape != (n, n):
            raise ValueError("a and q must both be n x n")
        if not np.allclose(self.q, self.q.T):
            raise ValueError("q must be symmetric")
        if self.graph is None:
            self.graph = Digraph.from_matrix(self.a)
        elif not np.array_equal(self.graph.pattern(), self.a != 0):
            raise ValueError("sparsity of a does not match graph")
        if np.any(np.diag(self.a) == 0):
            raise ValueError("every state needs a self-loop (nonzero diagonal)")
        self._q_factor = psd_factor(self.q)  # also rejects non-PSD q

    @property
    def n(self):
        return self.a.shape[0]


@dataclass
class SensorSuite:
    """Measurement rows ``h`` (N x n) and per-sensor noise variances ``r``."""

    h: np.ndarray
    r: np.ndarray

    def __post_init__(self):
        self.h = np.atleast_2d(np.asarray(self.h, dtype=float))
        self.r = np.asarray(self.r, dtype=float).ravel()
        if self.r.size != self.h.shape[0]:
            raise ValueError("need one noise variance per sensor")
        if np.any(self.r <= 0):
            raise ValueError("measurement noise variances must be positive")

    @property
    def n_sensors(self):
        return self.h.shape[0]


@dataclass(frozen=True)
class AttackEpisode:
    """Additive ``N(mean, std**2)`` attack active for ``start <= k <= end``."""

    start: int
    mean: float
    std: float
    end: int = None

    def __post_init__(self):
        if self.std < 0:
            raise ValueError("attack std must be non-negative")
        if self.end is not None and self.end < self.start:
            raise ValueError("attack end precedes start")

    def active(self, k):
        return k >= self.start and (self.end is None or k <= self.end)

    def to_json(self):
        return {"start": self.start, "end": self.end, "mean": self.mean, "std": self.std}


@dataclass
class AttackSchedule:
    episodes: dict = field(default_factory=dict)  # sensor id -> list of episodes

    def __post_init__(self):
        for sensor, eps in self.episodes.items():
            eps = sorted(eps, key=lambda e: e.start)
            for prev, nxt in zip(eps, eps[1:]):
                if prev.end is None or prev.end >= nxt.start:
                    raise ValueError(f"overlapping attack episodes on sensor {sensor}")
            self.episodes[sensor] = eps

    def episode_at(self, sensor, k):
        for ep in self.episodes.get(sensor, ()):
            if ep.active(k):
                return ep
        return None

    def onset(self, sensor):
        eps = self.episodes.get(sensor)
        return eps[0].start if eps else None

    def to_json(self):
        return [
            dict(sensor=s, **ep.to_json())
            for s in sorted(self.episodes) for ep in self.episodes[s]
        ]

    @classmethod
    def from_json(cls, items):
        eps = {}
        for item in items or []:
            ep = AttackEpisode(
                start=int(item["start"]),
                end=None if item.get("end") is None else int(item["end"]),
                mean=float(item.get("mean", 0.0)),
                std=float(item.get("std", 0.0)),
            )
            eps.setdefault(int(item["sensor"]), []).append(ep)
        return cls(eps)


def step_truth(system, x, sampler):
    x = np.asarray(x, dtype=float)
    if x.shape != (system.n,):
        raise ValueError(f"state must have length {system.n}")
    return system.a @ x + system._q_factor @ sampler.standard_normal(system.n)


def attack_values(schedule, n_sensors, k, sampler):
    """Attack vector at step ``k``; draws once per active episode only."""
    tau = np.zeros(n_sensors)
    for i in range(n_sensors):
        ep = schedule.episode_at(i, k) if schedule is not None else None
        if ep is not None:
            tau[i] = sampler.normal(ep.mean, ep.std)
    return tau


def measure(suite, schedule, x, k, sampler, attack_sampler=None):
    """``y_i = H_i x + tau_i + eta_i``.

    Attack draws come from ``attack_sampler`` when given so the noise stream
    stays aligned between attacked and attack-free replications.
    """
    eta = np.sqrt(suite.r) * sampler.standard_normal(suite.n_sensors)
    tau = attack_values(schedule, suite.n_sensors, k, attack_sampler or sampler)
    return suite.h @ np.asarray(x, dtype=float) + tau + eta


def make_random_system(graph, target_rho, sampler, q=None, max_attempts=10):
    """Random weights in (0, 1.1] on ``graph`` rescaled to radius ``target_rho``."""
    if not target_rho > 0:
        raise ValueError("target_rho must be positive")
    if not is_structurally_full_rank(graph):
        raise ValueError("graph is not structurally full rank")
    mask = graph.pattern()
    if not np.all(np.diag(mask)):
        raise ValueError("graph needs a self-loop on every node")
    n = graph.n_nodes
    for _ in range(max_attempts):
        draws = 1.1 * (1.0 - sampler.uniform(0.0, 1.0, size=(n, n)))  # (0, 1.1]
        a = np.where(mask, draws, 0.0)
        rho = spectral_radius(a)
        if rho > 0:
            a = a * (target_rho / rho)
            if q is None:
                q = np.zeros((n, n))
            return SocialSystem(a=a, q=q, graph=graph)
    raise RuntimeError(f"degenerate draws: zero spectral radius after {max_attempts} attempts")
