"""Simulation of the full networked system and synchronization verdicts."""

import json
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.spatial.distance import pdist

from . import graph as gr
from .errors import DimensionMismatch, StepGuardViolation, VariantMismatch
from .serialize import dumps, write_rows_csv

STEP_GUARD = 0.1


@dataclass(frozen=True, eq=False)
class NetworkConfig:
    plant: object
    protocol: object
    graph: object
    bounds: object = None
    x0: np.ndarray = None
    xc0: np.ndarray = None

    def __post_init__(self):
        N, n, nc = self.graph.n_agents, self.plant.n, self.protocol.n_c
        self.protocol.check_plant(self.plant)
        scaled = self.protocol.scaling == "local_bounds"
        if scaled != (self.bounds is not None):
            raise VariantMismatch("local bounds must be given exactly when the protocol is scaled")
        if scaled:
            object.__setattr__(self, "bounds", gr.check_bounds(self.graph, self.bounds))
        x0 = np.zeros((N, n)) if self.x0 is None else np.array(self.x0, dtype=float).reshape(N, n)
        xc0 = np.zeros((N, nc)) if self.xc0 is None else np.array(self.xc0, dtype=float).reshape(N, nc)
        object.__setattr__(self, "x0", x0)
        object.__setattr__(self, "xc0", xc0)

    @property
    def coupling_matrix(self):
        """L, or diag(1/(1+q_i)) L when local bounds scale the network signal."""
        L = gr.build_laplacian(self.graph)
        return L if self.bounds is None else gr.scaled_laplacian(L, self.bounds)

    def to_dict(self):
        return {
            "plant": self.plant.to_dict(),
            "protocol": self.protocol.to_dict(),
            "graph": self.graph.to_dict(),
            "bounds": None if self.bounds is None else list(self.bounds),
            "x0": self.x0,
            "xc0": self.xc0,
        }


@dataclass
class Trace:
    times: np.ndarray
    x: np.ndarray  # (T, N, n)
    xc: np.ndarray  # (T, N, n_c)
    sync_error: np.ndarray
    h: float = None

    @property
    def states(self):
        return np.concatenate([self.x, self.xc], axis=2)

    def write_csv(self, path_or_buf):
        n, nc = self.x.shape[2], self.xc.shape[2]
        header = (["time", "agent"] + [f"x{k}" for k in range(n)]
                  + [f"xc{k}" for k in range(nc)] + ["sync_error"])
        rows = []
        for t, X, Xc, err in zip(self.times, self.x, self.xc, self.sync_error):
            for i in range(X.shape[0]):
                rows.append([float(t), i, *map(float, X[i]), *map(float, Xc[i]), float(err)])
        write_rows_csv(path_or_buf, header, rows)


def _max_pair_distance(X):
    if X.shape[0] < 2:
        return 0.0
    return float(np.max(pdist(X)))


def sync_error_series(trace):
    """(max over pairs ||x_i - x_j||, ||x - mean agent state||) per time point."""
    pairs = np.array([_max_pair_distance(X) for X in trace.x])
    centered = trace.x - trace.x.mean(axis=1, keepdims=True)
    disagreement = np.sqrt(np.sum(centered**2, axis=(1, 2)))
    return pairs, disagreement


class _NetworkOperator:
    """Stacked closed-loop map acting on agent-major state arrays."""

    def __init__(self, config):
        p, pr = config.plant, config.protocol
        Lz = config.coupling_matrix
        density = np.count_nonzero(Lz) / Lz.size
        self.Lz = sp.csr_matrix(Lz) if density < 0.3 else Lz
        self.At, self.Bt, self.Ct = p.A.T, p.B.T, p.C.T
        self.Act, self.Bct, self.Fct, self.Dct = pr.Ac.T, pr.Bc.T, pr.Fc.T, pr.Dc.T
        self.n = p.n
        self.static = pr.n_c == 0
        self.Lz_dense = Lz

    def __call__(self, X, Xc):
        Z = self.Lz @ (X @ self.Ct)
        U = Z @ self.Dct
        if not self.static:
            U = U + Xc @ self.Fct
            dXc = Xc @ self.Act + Z @ self.Bct
        else:
            dXc = Xc
        return X @ self.At + U @ self.Bt, dXc

    def norm_bound(self, config):
        """Upper bound on the 2-norm of the stacked closed-loop matrix."""
        p, pr = config.plant, config.protocol
        A_tilde = np.block([[p.A, p.B @ pr.Fc], [np.zeros((pr.n_c, p.n)), pr.Ac]])
        BC_tilde = np.block([[p.B @ pr.Dc @ p.C, np.zeros((p.n, pr.n_c))],
                             [pr.Bc @ p.C, np.zeros((pr.n_c, pr.n_c))]])
        return np.linalg.norm(A_tilde, 2) + np.linalg.norm(self.Lz_dense, 2) * np.linalg.norm(BC_tilde, 2)


def simulate(config, T, h=None, record_every=1):
    """Simulate the network.

    Continuous plants integrate with classic fixed-step RK4 over ``[0, T]``;
    ``h * ||closed loop|| <= 0.1`` is enforced (``h=None`` picks the largest
    admissible step). Discrete plants iterate exactly for ``T`` steps.
    """
    op = _NetworkOperator(config)
    X, Xc = config.x0.copy(), config.xc0.copy()
    N = X.shape[0]
    if config.plant.domain == "continuous":
        bound = op.norm_bound(config)
        if h is None:
            h = STEP_GUARD / bound if bound > 0 else min(T, 1.0)
        if h <= 0:
            raise StepGuardViolation("step size must be positive")
        if h * bound > STEP_GUARD * (1 + 1e-12):
            raise StepGuardViolation(
                f"h * ||closed loop|| = {h * bound:.4g} exceeds {STEP_GUARD}; use h <= {STEP_GUARD / bound:.4g}"
            )
        steps = int(np.ceil(T / h - 1e-9))
        if steps:
            h = T / steps  # land exactly on T; never larger than requested
    else:
        if int(T) != T or T < 0:
            raise DimensionMismatch("discrete horizon T must be a nonnegative step count")
        steps = int(T)
        h = None

    def step(X, Xc):
        if h is None:
            return op(X, Xc)
        k1 = op(X, Xc)
        k2 = op(X + h / 2 * k1[0], Xc + h / 2 * k1[1])
        k3 = op(X + h / 2 * k2[0], Xc + h / 2 * k2[1])
        k4 = op(X + h * k3[0], Xc + h * k3[1])
        return (X + h / 6 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0]),
                Xc + h / 6 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1]))

    idx = list(range(0, steps + 1, record_every))
    if idx[-1] != steps:
        idx.append(steps)
    xs = np.empty((len(idx), N, X.shape[1]))
    xcs = np.empty((len(idx), N, Xc.shape[1]))
    err = np.empty(len(idx))
    slot = 0
    for k in range(steps + 1):
        if k == idx[slot]:
            xs[slot], xcs[slot] = X, Xc
            err[slot] = _max_pair_distance(X)
            slot += 1
        if k < steps:
            X, Xc = step(X, Xc)
    if config.plant.domain == "continuous":
        times = np.asarray(idx, dtype=float) * h
    else:
        times = np.asarray(idx, dtype=float)
    return Trace(times, xs, xcs, err, h)


def verdict(sync_error, tol=1e-6, window=None):
    """Finite-horizon surrogate of lim x_i - x_j = 0.

    ``synchronized``: below ``tol`` throughout the final window, whose maximum
    does not exceed that of the preceding window. ``not_synchronized``: above
    ``10 tol`` throughout the final window and not decreasing relative to the
    preceding window. Otherwise ``undecided``. ``window`` defaults to the
    final 10% of the samples.
    """
    e = np.asarray(getattr(sync_error, "sync_error", sync_error), dtype=float)
    n = e.size
    w = max(1, n // 10) if window is None else int(window)
    if w > n:
        raise ValueError("window longer than the series")
    last = e[n - w:]
    prev = e[max(0, n - 2 * w):n - w]
    prev_max = prev.max() if prev.size else np.inf
    if np.all(last < tol) and last.max() <= prev_max:
        return "synchronized"
    if np.all(last > 10 * tol) and (not prev.size or last.max() >= prev.max()):
        return "not_synchronized"
    return "undecided"


def write_trace(trace, config, csv_path, sidecar_path=None):
    """CSV trace plus a JSON echo of the configuration for reproducibility."""
    trace.write_csv(csv_path)
    sidecar_path = sidecar_path or str(csv_path) + ".json"
    with open(sidecar_path, "w") as fh:
        fh.write(dumps({"config": config.to_dict(), "h": trace.h, "T": float(trace.times[-1])}))
    return sidecar_path


def load_config(path):
    with open(path) as fh:
        return config_from_dict(json.load(fh))


def config_from_dict(d):
    from .plant import LTIPlant
    from .synthesis import Protocol

    return NetworkConfig(
        LTIPlant.from_dict(d["plant"]),
        Protocol.from_dict(d["protocol"]),
        gr.WeightedDigraph.from_dict(d["graph"]),
        d.get("bounds"),
        d.get("x0"),
        d.get("xc0"),
    )
