import numpy as np
import pytest

from distdetect.gainsynth import GainSet, assemble_abar
from distdetect.matcore import GaussianSampler
from distdetect.netgraph import Digraph, SensingPattern, build_row_stochastic_w, tarjan_scc


def random_social_graph(rng, n, p_edge=0.35):
    edges = {(i, i) for i in range(n)}
    for u in range(n):
        for v in range(n):
            if u != v and rng.random() < p_edge:
                edges.add((u, v))
    return Digraph(n, frozenset(edges))


def covering_sensors(g, rng, n_sensors):
    """One sensed state per SCC first, then random extras."""
    comps = tarjan_scc(g)
    states = [int(rng.choice(c)) for c in comps]
    while len(states) < n_sensors:
        states.append(int(rng.integers(g.n_nodes)))
    rng.shuffle(states)
    return SensingPattern(states[:max(n_sensors, len(comps))])


def random_stable_instance(seed, n=3, n_sensors=3, kappa=0.5, rho_a=0.9):
    """Small instance with ``rho(A) < 1`` and gain columns ``kappa H_i^T``."""
    rng = np.random.default_rng(seed)
    a = rng.uniform(-1, 1, (n, n))
    a *= rho_a / np.max(np.abs(np.linalg.eigvals(a)))
    w = build_row_stochastic_w(Digraph.cycle(n_sensors), GaussianSampler(seed, 1))
    h = np.zeros((n_sensors, n))
    h[np.arange(n_sensors), rng.integers(0, n, n_sensors)] = 1.0
    blocks = np.stack([kappa * np.outer(h[i], h[i]) for i in range(n_sensors)])
    gains = GainSet(blocks=blocks, c_floor=0.0)
    return a, w, h, gains, assemble_abar(a, w, h, gains)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
