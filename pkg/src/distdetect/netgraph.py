"""Digraphs, structural checks, and fusion-matrix construction.

Edge convention: an edge ``(j, i)`` means node ``i`` reads node ``j``, so a
weight matrix built on the graph has ``M[i, j] != 0``. For the social graph
this says state ``j`` drives state ``i``; for the sensor graph it says
sensor ``i`` fuses the estimate of sensor ``j``.
"""

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .errors import InstanceTooLargeError, StructuralRankError
from .matcore import as_mat, kron

MAX_OBSERVABILITY_DIM = 60
RANK_RTOL = 1e-8


@dataclass(frozen=True)
class Digraph:
    n_nodes: int
    edges: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        if self.n_nodes < 1:
            raise ValueError("n_nodes must be positive")
        edges = frozenset((int(u), int(v)) for u, v in self.edges)
        for u, v in edges:
            if not (0 <= u < self.n_nodes and 0 <= v < self.n_nodes):
                raise ValueError(f"edge {(u, v)} out of range for {self.n_nodes} nodes")
        object.__setattr__(self, "edges", edges)

    @classmethod
    def from_edges(cls, n_nodes, edges):
        edges = list(edges)
        if len(set(map(tuple, edges))) != len(edges):
            raise ValueError("duplicate edges")
        return cls(n_nodes, frozenset(map(tuple, edges)))

    @classmethod
    def cycle(cls, n_nodes):
        if n_nodes == 1:
            return cls(1)
        return cls(n_nodes, frozenset((i, (i + 1) % n_nodes) for i in range(n_nodes)))

    @classmethod
    def from_matrix(cls, m):
        m = np.asarray(m)
        return cls(m.shape[0], frozenset((int(j), int(i)) for i, j in zip(*np.nonzero(m))))

    def with_self_loops(self):
        return Digraph(self.n_nodes, self.edges | {(i, i) for i in range(self.n_nodes)})

    def successors(self):
        out = [[] for _ in range(self.n_nodes)]
        for u, v in sorted(self.edges):
            out[u].append(v)
        return out

    def pattern(self):
        """Boolean ``n x n`` mask with ``mask[i, j]`` set for edge ``(j, i)``."""
        mask = np.zeros((self.n_nodes, self.n_nodes), dtype=bool)
        for u, v in self.edges:
            mask[v, u] = True
        return mask

    def to_edge_list(self):
        return "".join(f"{u} {v}\n" for u, v in sorted(self.edges))

    @classmethod
    def parse_edge_list(cls, text, n_nodes=None):
        edges = []
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 2:
                raise ValueError(f"line {lineno}: expected 'from to', got {line!r}")
            edges.append((int(parts[0]), int(parts[1])))
        if n_nodes is None:
            n_nodes = 1 + max((max(e) for e in edges), default=0)
        return cls.from_edges(n_nodes, edges)

    def to_json(self):
        return {"n_nodes": self.n_nodes, "edges": [list(e) for e in sorted(self.edges)]}

    @classmethod
    def from_json(cls, obj):
        return cls.from_edges(int(obj["n_nodes"]), [tuple(e) for e in obj.get("edges", [])])


@dataclass(frozen=True)
class SensingPattern:
    """``states[i]`` is the single state observed by sensor ``i``."""

    states: tuple

    def __post_init__(self):
        object.__setattr__(self, "states", tuple(int(s) for s in self.states))
        if not self.states:
            raise ValueError("need at least one sensor")

    @property
    def n_sensors(self):
        return len(self.states)

    def h_rows(self, n_states):
        h = np.zeros((self.n_sensors, n_states))
        for i, s in enumerate(self.states):
            if not 0 <= s < n_states:
                raise ValueError(f"sensor {i} observes state {s}, out of range")
            h[i, s] = 1.0
        return h


def tarjan_scc(g):
    """Strongly connected components, iterative Tarjan.

    Components come out in reverse topological order of the condensation
    (sinks first); each is a sorted tuple.
    """
    succ = g.successors()
    index = [-1] * g.n_nodes
    low = [0] * g.n_nodes
    on_stack = [False] * g.n_nodes
    stack = []
    comps = []
    counter = 0
    for root in range(g.n_nodes):
        if index[root] != -1:
            continue
        work = [(root, 0)]
        index[root] = low[root] = counter
        counter += 1
        stack.append(root)
        on_stack[root] = True
        while work:
            v, pos = work[-1]
            if pos < len(succ[v]):
                work[-1] = (v, pos + 1)
                w = succ[v][pos]
                if index[w] == -1:
                    index[w] = low[w] = counter
                    counter += 1
                    stack.append(w)
                    on_stack[w] = True
                    work.append((w, 0))
                elif on_stack[w]:
                    low[v] = min(low[v], index[w])
                continue
            work.pop()
            if work:
                parent = work[-1][0]
                low[parent] = min(low[parent], low[v])
            if low[v] == index[v]:
                comp = []
                while True:
                    w = stack.pop()
                    on_stack[w] = False
                    comp.append(w)
                    if w == v:
                        break
                comps.append(tuple(sorted(comp)))
    return comps


def _hopcroft_karp(adj, n_left, n_right):
    inf = float("inf")
    match_l = [-1] * n_left
    match_r = [-1] * n_right
    dist = [0.0] * n_left

    def bfs():
        q = deque()
        for u in range(n_left):
            if match_l[u] == -1:
                dist[u] = 0
                q.append(u)
            else:
                dist[u] = inf
        found = False
        while q:
            u = q.popleft()
            for v in adj[u]:
                w = match_r[v]
                if w == -1:
                    found = True
                elif dist[w] == inf:
                    dist[w] = dist[u] + 1
                    q.append(w)
        return found

    def dfs(u):
        for v in adj[u]:
            w = match_r[v]
            if w == -1 or (dist[w] == dist[u] + 1 and dfs(w)):
                match_l[u] = v
                match_r[v] = u
                return True
        dist[u] = inf
        return False

    size = 0
    while bfs():
        for u in range(n_left):
            if match_l[u] == -1 and dfs(u):
                size += 1
    return size


def is_structurally_full_rank(g):
    """True iff the row/column bipartite graph of the pattern has a perfect matching."""
    adj = [[] for _ in range(g.n_nodes)]
    for u, v in g.edges:
        adj[v].append(u)  # row v has a structural nonzero in column u
    return _hopcroft_karp(adj, g.n_nodes, g.n_nodes) == g.n_nodes


@dataclass
class Lemma1Report:
    holds: bool
    components: list
    uncovered: list

    def to_json(self):
        return {
            "holds": self.holds,
            "components": [list(c) for c in self.components],
            "uncovered": [list(c) for c in self.uncovered],
        }


def check_lemma1(g, sensing):
    """Every SCC of the social graph must contain at least one sensed state.

    Raises :class:`StructuralRankError` if ``g`` is not structurally full
    rank, since the coverage argument does not apply then.
    """
    if not is_structurally_full_rank(g):
        raise StructuralRankError("social graph is not structurally full rank; SCC coverage test inapplicable")
    sensed = set(sensing.states)
    comps = tarjan_scc(g)
    uncovered = [c for c in comps if not sensed.intersection(c)]
    return Lemma1Report(holds=not uncovered, components=comps, uncovered=uncovered)


def check_lemma2(gn):
    """Sensor network must be strongly connected (irreducible fusion matrix)."""
    return len(tarjan_scc(gn)) == 1


def build_row_stochastic_w(gn, sampler=None):
    """Row-stochastic fusion weights on ``gn`` plus self-loops.

    Uniform over in-neighbours when ``sampler`` is None; otherwise weights
    are drawn from (0, 1] and normalised per row.
    """
    mask = gn.with_self_loops().pattern()
    if sampler is None:
        w = mask.astype(float)
    else:
        draws = 1.0 - sampler.uniform(0.0, 1.0, size=mask.shape)  # (0, 1]
        w = np.where(mask, draws, 0.0)
    return w / w.sum(axis=1, keepdims=True)


def observability_matrix(m, c):
    """Stack ``[c; c m; ...; c m^(d-1)]`` with ``m`` rescaled to unit radius.

    Scaling ``m`` by a positive scalar leaves the rank unchanged and keeps
    the block rows from blowing up or vanishing.
    """
    d = m.shape[0]
    scale = np.max(np.abs(np.linalg.eigvals(m)))
    if scale > 0:
        m = m / scale
    blocks = [c]
    for _ in range(d - 1):
        blocks.append(blocks[-1] @ m)
    return np.vstack(blocks)


def numeric_rank(m, rtol=RANK_RTOL):
    s = np.linalg.svd(m, compute_uv=False)
    if s.size == 0 or s[0] == 0:
        return 0
    return int(np.sum(s > rtol * s[0]))


def observable_dim(m, c, rtol=RANK_RTOL):
    """Dimension of the observable subspace of ``(m, c)``.

    Orthogonal staircase: grow an orthonormal basis of
    ``span{c^T, m^T c^T, ...}`` one Krylov step at a time, keeping new
    directions whose singular values exceed ``rtol * max(||m||_2, 1)``.
    Same rank as the stacked observability matrix, without the loss of
    conditioning from explicit powers.
    """
    u, s, _ = np.linalg.svd(c.T, full_matrices=False)
    if s.size == 0 or s[0] == 0:
        return 0
    scale = max(np.linalg.norm(m, 2), 1.0)
    basis = u[:, s > rtol * s[0]]
    last = basis
    while last.shape[1] and basis.shape[1] < m.shape[0]:
        z = m.T @ last
        for _ in range(2):
            z -= basis @ (basis.T @ z)
        u, s, _ = np.linalg.svd(z, full_matrices=False)
        last = u[:, s > rtol * scale]
        basis = np.hstack([basis, last])
    return basis.shape[1]


def verify_distributed_observability(a, w, dh, max_dim=MAX_OBSERVABILITY_DIM):
    """Numeric observability test of the pair ``(W kron A, D_H)``."""
    a = as_mat(a, "a")
    w = as_mat(w, "w")
    dh = as_mat(dh, "dh")
    dim = a.shape[0] * w.shape[0]
    if dh.shape != (dim, dim):
        raise ValueError(f"dh must be {dim}x{dim}, got {dh.shape}")
    if dim > max_dim:
        raise InstanceTooLargeError(f"observability check capped at dimension {max_dim}, got {dim}")
    return observable_dim(kron(w, a), dh) == dim


def block_diag_dh(h_rows):
    """``D_H = diag[H_i^T H_i]`` for the stacked per-sensor states."""
    h = np.atleast_2d(np.asarray(h_rows, dtype=float))
    n_sensors, n = h.shape
    dh = np.zeros((n_sensors * n, n_sensors * n))
    for i in range(n_sensors):
        dh[i * n:(i + 1) * n, i * n:(i + 1) * n] = np.outer(h[i], h[i])
    return dh


def block_diag_dh_bar(h_rows):
    """``diag[H_i^T]``, shape ``(N n) x N``."""
    h = np.atleast_2d(np.asarray(h_rows, dtype=float))
    n_sensors, n = h.shape
    out = np.zeros((n_sensors * n, n_sensors))
    for i in range(n_sensors):
        out[i * n:(i + 1) * n, i] = h[i]
    return out
