"""Directed communication networks in adjacency, Laplacian and row-stochastic form.

Convention: ``weights[i, j] = a_ij`` is the weight of the edge from node ``j``
into node ``i``, so row ``i`` collects everything agent ``i`` receives.
"""

import json
from dataclasses import dataclass

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .errors import BoundViolation, EigensolverFailure, InvalidGraph
from .serialize import matrix_to_csv

#: Eigenvalues closer than this (relative to max(1, ||M||)) to 0 or 1 are
#: counted as the synchronization eigenvalue.
SPECTRAL_TOL = 1e-7

GRAPH_KINDS = ("cycle", "path", "star", "complete", "random_spanning_tree")


@dataclass(frozen=True, eq=False)
class WeightedDigraph:
    weights: np.ndarray

    def __post_init__(self):
        W = np.array(self.weights, dtype=float)
        if W.ndim != 2 or W.shape[0] != W.shape[1] or W.shape[0] < 1:
            raise InvalidGraph(f"adjacency must be a nonempty square matrix, got shape {W.shape}")
        if not np.all(np.isfinite(W)):
            raise InvalidGraph("adjacency contains non-finite weights")
        if np.any(W < 0):
            raise InvalidGraph("edge weights must be nonnegative")
        if np.any(np.diag(W) != 0):
            raise InvalidGraph("self-loops are not allowed (a_ii must be 0)")
        W.setflags(write=False)
        object.__setattr__(self, "weights", W)

    @property
    def n_agents(self):
        return self.weights.shape[0]

    @property
    def in_degree(self):
        """Weighted in-degree d_in(i) = sum_j a_ij."""
        return self.weights.sum(axis=1)

    @classmethod
    def from_edges(cls, n, edges):
        """Build from ``(from, to, weight)`` triples; repeated edges overwrite."""
        W = np.zeros((n, n))
        for src, dst, w in edges:
            if not (0 <= src < n and 0 <= dst < n):
                raise InvalidGraph(f"edge ({src}, {dst}) out of range for n={n}")
            W[dst, src] = w
        return cls(W)

    def edges(self):
        dst, src = np.nonzero(self.weights)
        order = np.lexsort((dst, src))
        return [(int(src[k]), int(dst[k]), float(self.weights[dst[k], src[k]])) for k in order]

    def to_dict(self):
        return {"n": self.n_agents, "edges": [list(e) for e in self.edges()]}

    @classmethod
    def from_dict(cls, d):
        try:
            return cls.from_edges(int(d["n"]), [(int(a), int(b), float(w)) for a, b, w in d["edges"]])
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, InvalidGraph):
                raise
            raise InvalidGraph(f"malformed graph description: {exc}") from exc

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def build_laplacian(g):
    """Laplacian with l_ii = d_in(i) and l_ij = -a_ij."""
    W = g.weights
    return np.diag(W.sum(axis=1)) - W


def has_directed_spanning_tree(g):
    """True iff some node has a directed path to every other node.

    Decided combinatorially: the condensation (graph of strongly connected
    components) must have exactly one component without incoming edges.
    """
    n = g.n_agents
    if n == 1:
        return True
    # csgraph edges run row -> column, i.e. from source to destination
    adj = csr_matrix((g.weights.T > 0).astype(np.int8))
    n_comp, labels = connected_components(adj, directed=True, connection="strong")
    if n_comp == 1:
        return True
    src, dst = adj.nonzero()
    has_incoming = np.zeros(n_comp, dtype=bool)
    cross = labels[src] != labels[dst]
    has_incoming[labels[dst[cross]]] = True
    return int(np.count_nonzero(~has_incoming)) == 1


def _sorted_eigvals(M):
    try:
        ev = np.linalg.eigvals(M)
    except np.linalg.LinAlgError as exc:
        raise EigensolverFailure(str(exc)) from exc
    ev = np.asarray(ev, dtype=complex)
    order = np.lexsort((ev.imag, ev.real))
    return ev[order]


def laplacian_spectrum(L):
    """Eigenvalues of ``L`` sorted by real part, then imaginary part."""
    return _sorted_eigvals(np.asarray(L, dtype=float))


def row_stochastic_spectrum(D):
    return _sorted_eigvals(np.asarray(D, dtype=float))


def zero_eigenvalue_multiplicity(L, tol=SPECTRAL_TOL):
    ev = laplacian_spectrum(L)
    scale = max(1.0, np.linalg.norm(L, 2))
    return int(np.count_nonzero(np.abs(ev) <= tol * scale))


def default_bounds(g, slack=1.0):
    """Local bounds q_i = d_in(i) + slack."""
    if slack <= 0:
        raise ValueError("slack must be positive")
    return g.in_degree + slack


def check_bounds(g, q):
    q = np.asarray(q, dtype=float)
    if q.shape != (g.n_agents,):
        raise BoundViolation(-1, q.shape, g.n_agents)
    d = g.in_degree
    for i in range(g.n_agents):
        if not (q[i] > d[i] and q[i] > 0):
            raise BoundViolation(i, float(q[i]), float(d[i]))
    return q


def to_row_stochastic(g, q):
    """Row-stochastic matrix d_ij = a_ij / (1 + q_i), d_ii = 1 - sum_{j != i} d_ij."""
    q = check_bounds(g, q)
    D = g.weights / (1.0 + q)[:, None]
    np.fill_diagonal(D, 1.0 - D.sum(axis=1))
    return D


def scaled_laplacian(L, q):
    """diag(1/(1+q_i)) L, equal to I - D for the row-stochastic form."""
    q = np.asarray(q, dtype=float)
    return L / (1.0 + q)[:, None]


def generate(kind, n, seed=0, weight_range=(1.0, 1.0)):
    """Deterministic graph generator; every kind contains a directed spanning tree.

    ``star`` points outward from hub 0. ``random_spanning_tree`` draws a random
    arborescence and then adds each remaining edge with probability 0.2.
    """
    if kind not in GRAPH_KINDS:
        raise InvalidGraph(f"unknown graph kind {kind!r}; expected one of {GRAPH_KINDS}")
    if int(n) != n or n < 1:
        raise InvalidGraph(f"n must be a positive integer, got {n!r}")
    n = int(n)
    lo, hi = (float(w) for w in weight_range)
    if lo < 0 or hi < lo:
        raise InvalidGraph(f"invalid weight range {weight_range!r}")
    if hi == 0 and n > 1:
        raise InvalidGraph("weight range [0, 0] cannot carry a spanning tree")
    rng = np.random.default_rng(seed)

    def w():
        return lo if hi == lo else float(rng.uniform(lo, hi))

    W = np.zeros((n, n))
    if kind == "cycle":
        if n > 1:
            for i in range(n):
                W[i, (i - 1) % n] = w()
    elif kind == "path":
        for i in range(1, n):
            W[i, i - 1] = w()
    elif kind == "star":
        for i in range(1, n):
            W[i, 0] = w()
    elif kind == "complete":
        for i in range(n):
            for j in range(n):
                if i != j:
                    W[i, j] = w()
    else:
        perm = rng.permutation(n)
        for k in range(1, n):
            parent = perm[rng.integers(0, k)]
            W[perm[k], parent] = w()
        for i in range(n):
            for j in range(n):
                if i != j and W[i, j] == 0 and rng.random() < 0.2:
                    W[i, j] = w()
    return WeightedDigraph(W)


def laplacian_csv(g):
    return matrix_to_csv(build_laplacian(g))


def row_stochastic_csv(g, q):
    return matrix_to_csv(to_row_stochastic(g, q))
