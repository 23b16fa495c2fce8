"""Structural analysis of the agent model (A, B, C) and solvability classification.

Tolerance policy: rank decisions threshold singular values at ``RANK_RTOL``
times the norm of the matrix being ranked; membership of the stability
boundary (Re s = 0, or |s| = 1 in discrete time) uses ``BOUNDARY_TOL``.
"""

import json
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.linalg as sla

from .errors import DegeneratePencil, DimensionMismatch, NotScalarChannel, PoleAt
from .serialize import matrix_from_json

RANK_RTOL = 1e-8
BOUNDARY_TOL = 1e-7
POLE_TOL = 1e-10
# clustering radius for repeated eigenvalues; numerically split Jordan blocks
# separate by roughly sqrt(eps) * ||A||
CLUSTER_TOL = 1e-5
ZERO_MATCH_TOL = 1e-6
# pencil rank-drop revalidation of computed zeros (looser than RANK_RTOL since
# multiple zeros are only computed to about sqrt(eps))
ZERO_RANK_RTOL = 1e-6

DOMAINS = ("continuous", "discrete")
PROBLEMS = ("P4", "P5")


@dataclass(frozen=True, eq=False)
class LTIPlant:
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    domain: str = "continuous"

    def __post_init__(self):
        A = np.atleast_2d(np.array(self.A, dtype=float))
        B = np.array(self.B, dtype=float)
        C = np.array(self.C, dtype=float)
        n = A.shape[0]
        if B.ndim == 1:
            B = B.reshape(n, -1) if B.size == n else B.reshape(1, -1)
        if C.ndim == 1:
            C = C.reshape(1, -1)
        if A.shape != (n, n) or n < 1:
            raise DimensionMismatch(f"A must be square and nonempty, got {A.shape}")
        if B.ndim != 2 or B.shape[0] != n or B.shape[1] < 1:
            raise DimensionMismatch(f"B must be {n}xm with m >= 1, got {B.shape}")
        if C.ndim != 2 or C.shape[1] != n or C.shape[0] < 1:
            raise DimensionMismatch(f"C must be px{n} with p >= 1, got {C.shape}")
        if self.domain not in DOMAINS:
            raise ValueError(f"domain must be one of {DOMAINS}, got {self.domain!r}")
        for name, M in (("A", A), ("B", B), ("C", C)):
            if not np.all(np.isfinite(M)):
                raise ValueError(f"{name} contains non-finite entries")
            M.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "C", C)

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def m(self):
        return self.B.shape[1]

    @property
    def p(self):
        return self.C.shape[0]

    @property
    def io_shape(self):
        if self.m == 1:
            return "SISO" if self.p == 1 else "SIMO"
        return "MISO" if self.p == 1 else "MIMO"

    @property
    def scalar_channel(self):
        return self.m == 1 or self.p == 1

    def with_domain(self, domain):
        return LTIPlant(self.A, self.B, self.C, domain)

    def to_dict(self):
        return {"A": self.A, "B": self.B, "C": self.C, "domain": self.domain}

    @classmethod
    def from_dict(cls, d):
        return cls(
            matrix_from_json(d["A"], "A"),
            matrix_from_json(d["B"], "B"),
            matrix_from_json(d["C"], "C"),
            d.get("domain", "continuous"),
        )

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


# --------------------------------------------------------------------------
# numerical helpers


def _rank(M, scale=None):
    M = np.atleast_2d(M)
    if M.size == 0:
        return 0
    sv = np.linalg.svd(M, compute_uv=False)
    ref = scale if scale is not None else (sv[0] if sv.size else 0.0)
    return int(np.count_nonzero(sv > RANK_RTOL * max(ref, 1.0)))


def in_closed_region(s, domain, tol=BOUNDARY_TOL):
    s = np.asarray(s)
    if domain == "continuous":
        return s.real <= tol
    return np.abs(s) <= 1 + tol


def in_open_region(s, domain, tol=BOUNDARY_TOL):
    s = np.asarray(s)
    if domain == "continuous":
        return s.real < -tol
    return np.abs(s) < 1 - tol


def on_boundary(s, domain, tol=BOUNDARY_TOL):
    s = np.asarray(s)
    if domain == "continuous":
        return np.abs(s.real) <= tol
    return np.abs(np.abs(s) - 1) <= tol


def cluster_eigenvalues(ev, tol=CLUSTER_TOL):
    """Group nearly equal eigenvalues; returns ``[(mean, multiplicity), ...]``."""
    ev = list(np.asarray(ev, dtype=complex))
    clusters = []
    used = [False] * len(ev)
    scale = max(1.0, max((abs(v) for v in ev), default=1.0))
    for i, v in enumerate(ev):
        if used[i]:
            continue
        members = [v]
        used[i] = True
        changed = True
        while changed:
            changed = False
            for j, w in enumerate(ev):
                if not used[j] and min(abs(w - u) for u in members) <= tol * scale:
                    members.append(w)
                    used[j] = True
                    changed = True
        clusters.append((complex(np.mean(members)), len(members)))
    return clusters


def spectral_abscissa(A):
    return float(np.max(np.linalg.eigvals(A).real))


def spectral_radius(A):
    return float(np.max(np.abs(np.linalg.eigvals(A))))


def is_asymptotically_stable(A, domain, tol=BOUNDARY_TOL):
    ev = np.linalg.eigvals(np.asarray(A))
    return bool(np.all(in_open_region(ev, domain, tol)))


def matrix_is_neutrally_stable(A, domain):
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    ev = np.linalg.eigvals(A)
    if not np.all(in_closed_region(ev, domain)):
        return False
    scale = np.linalg.norm(A, 2)
    for lam, mult in cluster_eigenvalues(ev[on_boundary(ev, domain)]):
        geometric = n - _rank(A - lam * np.eye(n), scale=scale)
        if geometric != mult:
            return False
    return True


# --------------------------------------------------------------------------
# structural tests


def pbh_stabilizable(plant):
    """PBH test: rank [lam I - A, B] = n at every eigenvalue outside the open stable region."""
    A, B = plant.A, plant.B
    n = plant.n
    scale = max(np.linalg.norm(A, 2), 1.0)
    for lam, _ in cluster_eigenvalues(np.linalg.eigvals(A)):
        if in_open_region(lam, plant.domain):
            continue
        if _rank(np.hstack([lam * np.eye(n) - A, B]), scale=scale) < n:
            return False
    return True


def pbh_detectable(plant):
    A, C = plant.A, plant.C
    n = plant.n
    scale = max(np.linalg.norm(A, 2), 1.0)
    for lam, _ in cluster_eigenvalues(np.linalg.eigvals(A)):
        if in_open_region(lam, plant.domain):
            continue
        if _rank(np.vstack([lam * np.eye(n) - A, C]), scale=scale) < n:
            return False
    return True


def is_neutrally_stable(plant):
    """Closed-region spectrum with semi-simple boundary eigenvalues."""
    return matrix_is_neutrally_stable(plant.A, plant.domain)


def pole_location(plant):
    ev = np.linalg.eigvals(plant.A)
    if np.all(in_open_region(ev, plant.domain)):
        return "open_stable"
    if np.all(in_closed_region(ev, plant.domain)):
        return "closed_stable"
    return "unstable"


def evaluate_transfer(A, B, C, s):
    """C (sI - A)^{-1} B at the complex frequency ``s``."""
    A = np.atleast_2d(np.asarray(A, dtype=complex))
    B = np.asarray(B, dtype=complex)
    C = np.asarray(C, dtype=complex)
    n = A.shape[0]
    if n == 0:
        return np.zeros((C.shape[0], B.shape[1]), dtype=complex)
    ev = np.linalg.eigvals(A)
    if np.min(np.abs(ev - s)) <= POLE_TOL:
        raise PoleAt(s)
    return C @ np.linalg.solve(s * np.eye(n) - A, B)


def plant_transfer(plant, s):
    return evaluate_transfer(plant.A, plant.B, plant.C, s)


def _pencil(A, B, C, s):
    n = A.shape[0]
    return np.block([[s * np.eye(n) - A, -B], [C, np.zeros((C.shape[0], B.shape[1]))]])


def _pencil_sigma_min(A, B, C, s):
    """Smallest of the min(n+m, n+p) singular values, relative to the pencil norm."""
    M = _pencil(A, B, C, s)
    sv = np.linalg.svd(M, compute_uv=False)
    k = min(M.shape) - 1
    return sv[k] / max(sv[0], 1.0)


def _square_zeros(A, B, C):
    n, m = B.shape
    M = np.block([[A, B], [-C, np.zeros((C.shape[0], m))]])
    E = np.zeros_like(M)
    E[:n, :n] = np.eye(n)
    ab = sla.eigvals(M, E, homogeneous_eigvals=True)
    alpha, beta = ab[0], ab[1]
    scale = max(np.linalg.norm(M, 2), 1.0)
    if np.any((np.abs(alpha) <= 1e-12 * scale) & (np.abs(beta) <= 1e-12)):
        raise DegeneratePencil("pencil has a (near) 0/0 generalized eigenvalue")
    finite = np.abs(beta) > 1e-10 * np.maximum(np.abs(alpha) / scale, 1e-300)
    finite &= np.abs(beta) > 1e-14
    zeros = alpha[finite] / beta[finite]
    return zeros[np.abs(zeros) < 1e8 * scale]


def _normal_rank_deficient(A, B, C, rng):
    for _ in range(3):
        s = complex(rng.normal(), rng.normal()) * (1 + np.linalg.norm(A, 2))
        if _pencil_sigma_min(A, B, C, s) > ZERO_RANK_RTOL:
            return False
    return True


def invariant_zeros(plant, seeds=(11, 23)):
    """Finite invariant zeros of the Rosenbrock pencil [sI - A, -B; C, 0].

    Square systems use the generalized eigenvalues of the pencil directly.
    Non-square systems are squared down with two independent random full-rank
    compressions; only zeros common to both (within ``ZERO_MATCH_TOL``) that
    also make the original pencil drop rank are reported.
    """
    A, B, C = plant.A, plant.B, plant.C
    if _normal_rank_deficient(A, B, C, np.random.default_rng(seeds[0])):
        raise DegeneratePencil("pencil [sI-A, -B; C, 0] is rank deficient for every s")
    m, p = plant.m, plant.p
    if m == p:
        zeros = _square_zeros(A, B, C)
    else:
        sets = []
        for seed in seeds:
            rng = np.random.default_rng(seed)
            if p > m:
                K = rng.normal(size=(m, p))
                sets.append(_square_zeros(A, B, K @ C))
            else:
                K = rng.normal(size=(m, p))
                sets.append(_square_zeros(A, B @ K, C))
        first, second = sets
        zeros = []
        remaining = list(second)
        for z in first:
            if not remaining:
                break
            d = [abs(z - w) for w in remaining]
            k = int(np.argmin(d))
            if d[k] <= ZERO_MATCH_TOL * max(1.0, abs(z)):
                zeros.append(z)
                remaining.pop(k)
        zeros = np.asarray(zeros, dtype=complex)
    kept = [z for z in zeros if _pencil_sigma_min(A, B, C, z) <= ZERO_RANK_RTOL]
    kept = np.asarray(kept, dtype=complex)
    kept = np.where(np.abs(kept.imag) <= 1e-10 * np.maximum(1.0, np.abs(kept)), kept.real, kept)
    order = np.lexsort((kept.imag, kept.real))
    return kept[order].astype(complex)


def _limit_is_finite_nonzero(plant, s0):
    """Numerical test that G(s)/(s - s0) has a finite, nonzero limit at s0."""
    radii = (1e-3, 1e-4, 1e-5)
    directions = np.exp(1j * np.pi / 2 * np.arange(4) + 0.3j)
    vals = {}
    for r in radii:
        for k, d in enumerate(directions):
            s = s0 + r * d
            try:
                G = plant_transfer(plant, s)
            except PoleAt:
                return False
            vals[r, k] = G.ravel() / (s - s0)
    mags = {r: np.mean([np.linalg.norm(vals[r, k]) for k in range(4)]) for r in radii}
    if not all(np.isfinite(v) for v in mags.values()) or mags[radii[0]] == 0:
        return False
    # a finite nonzero limit keeps the magnitude constant as r shrinks
    ratio = mags[radii[-1]] / mags[radii[0]]
    if not 0.5 <= ratio <= 2.0:
        return False
    ref = vals[radii[-1], 0]
    spread = max(np.linalg.norm(vals[radii[-1], k] - ref) for k in range(4))
    return spread <= 1e-2 * np.linalg.norm(ref)


def is_weakly_minimum_phase(plant):
    """Zeros in the closed stable region, boundary zeros semi-simple (scalar channels)."""
    if not plant.scalar_channel:
        raise NotScalarChannel("weak minimum phase is only decided for SISO/SIMO/MISO plants")
    zeros = invariant_zeros(plant)
    if not np.all(in_closed_region(zeros, plant.domain)):
        return False
    for z, _ in cluster_eigenvalues(zeros[on_boundary(zeros, plant.domain)]):
        if not _limit_is_finite_nonzero(plant, z):
            return False
    return True


def is_minimum_phase(plant):
    zeros = invariant_zeros(plant)
    return bool(np.all(in_open_region(zeros, plant.domain)))


def markov_parameters(plant, k_max=None):
    k_max = plant.n if k_max is None else k_max
    out = []
    AkB = plant.B
    for _ in range(k_max):
        out.append(plant.C @ AkB)
        AkB = plant.A @ AkB
    return out


def relative_degree(plant):
    """Smallest k with C A^{k-1} B nonzero (scalar channel) or nonsingular (square).

    Square MIMO plants must be uniform rank: all earlier Markov parameters
    vanish. Returns ``None`` if no such k <= n exists, or for non-square MIMO.
    """
    scale = np.linalg.norm(plant.C, 2) * np.linalg.norm(plant.B, 2)
    tol = 1e-10 * max(scale, 1e-300)
    for k, Mk in enumerate(markov_parameters(plant), start=1):
        if plant.scalar_channel:
            if np.linalg.norm(Mk) > tol:
                return k
            continue
        if plant.m != plant.p:
            return None
        r = _rank(Mk, scale=max(scale, 1.0) * max(1.0, np.linalg.norm(plant.A, 2)) ** (k - 1))
        if r == plant.m:
            return k
        if r > 0:
            return None
    return None


def uniform_rank_order_one(plant):
    """CB of full rank min(m, p); ``None`` for non-square MIMO (undecided)."""
    if not plant.scalar_channel and plant.m != plant.p:
        return None
    CB = plant.C @ plant.B
    scale = max(np.linalg.norm(plant.C, 2) * np.linalg.norm(plant.B, 2), 1e-300)
    sv = np.linalg.svd(CB, compute_uv=False)
    return bool(sv[-1] > 1e-10 * scale) if plant.m == plant.p else bool(sv[0] > 1e-10 * scale)


# --------------------------------------------------------------------------
# reports


@dataclass
class StructuralReport:
    stabilizable: bool
    detectable: bool
    pole_location: str
    neutrally_stable: bool
    invariant_zeros: list
    minimum_phase: object
    weakly_minimum_phase: object
    relative_degree: object
    io_shape: str
    degenerate_pencil: bool = False

    def to_dict(self):
        d = asdict(self)
        d["invariant_zeros"] = [complex(z) for z in self.invariant_zeros]
        return d


def analyze(plant):
    try:
        zeros = invariant_zeros(plant)
        degenerate = False
    except DegeneratePencil:
        zeros = np.zeros(0, dtype=complex)
        degenerate = True
    if degenerate:
        min_phase = weak = None
    else:
        min_phase = bool(np.all(in_open_region(zeros, plant.domain)))
        if plant.scalar_channel:
            weak = is_weakly_minimum_phase(plant)
        elif np.any(on_boundary(zeros, plant.domain)):
            weak = None  # boundary-zero semi-simplicity is not decided for MIMO
        else:
            weak = bool(np.all(in_closed_region(zeros, plant.domain)))
    return StructuralReport(
        stabilizable=pbh_stabilizable(plant),
        detectable=pbh_detectable(plant),
        pole_location=pole_location(plant),
        neutrally_stable=is_neutrally_stable(plant),
        invariant_zeros=list(zeros),
        minimum_phase=min_phase,
        weakly_minimum_phase=weak,
        relative_degree=relative_degree(plant),
        io_shape=plant.io_shape,
        degenerate_pencil=degenerate,
    )


@dataclass
class SolvabilityVerdict:
    problem: str
    domain: str
    verdict: str
    cited_theorem: str
    conditions: list = field(default_factory=list)

    @property
    def failed(self):
        return [c["name"] for c in self.conditions if c["passed"] is False]

    def to_dict(self):
        return asdict(self)


def _cond(name, value):
    return {"name": name, "passed": None if value is None else bool(value)}


def classify(plant, problem, report=None):
    """Place the plant between the necessary and sufficient conditions for ``problem``.

    ``problem`` is ``"P4"`` (Laplacian coupling, no local bounds) or ``"P5"``
    (row-stochastic coupling through local bounds). Anything that passes
    every necessary condition but not the sufficient ones is a ``gap``.
    """
    if problem not in PROBLEMS:
        raise ValueError(f"problem must be one of {PROBLEMS}")
    r = report if report is not None else analyze(plant)
    ct = plant.domain == "continuous"
    stable = r.pole_location == "open_stable"
    tag = {("P4", True): ("Theorem 1", "Theorem 2"), ("P4", False): ("Theorem 5", "Theorem 5"),
           ("P5", True): ("Theorem 3", "Theorem 4"), ("P5", False): ("Theorem 6", "Theorem 7")}
    nec_thm, suf_thm = tag[problem, ct]

    def verdict(kind, thm, conds):
        return SolvabilityVerdict(problem, plant.domain, kind, thm, conds)

    if stable:
        return verdict("solvable_by_sufficiency", suf_thm, [_cond("asymptotically_stable", True)])
    if problem == "P4" and not ct:
        return verdict("ruled_out_by_necessity", "Theorem 5", [_cond("asymptotically_stable", False)])

    stabdet = [_cond("stabilizable", r.stabilizable), _cond("detectable", r.detectable)]
    closed = r.pole_location != "unstable"
    neutral = r.neutrally_stable

    if plant.scalar_channel:
        if problem == "P4":
            necessary = stabdet + [
                _cond("neutrally_stable", neutral),
                _cond("weakly_minimum_phase", r.weakly_minimum_phase),
                _cond("relative_degree_one", r.relative_degree == 1),
            ]
            sufficient = stabdet + [
                _cond("neutrally_stable", neutral),
                _cond("minimum_phase", r.minimum_phase),
                _cond("uniform_rank_order_one", uniform_rank_order_one(plant)),
            ]
        else:
            necessary = stabdet + [_cond("neutrally_stable", neutral)]
            sufficient = necessary
    else:
        necessary = stabdet + [_cond("poles_in_closed_stable_region", closed)]
        if problem == "P4":
            sufficient = stabdet + [
                _cond("neutrally_stable", neutral),
                _cond("minimum_phase", r.minimum_phase),
                _cond("uniform_rank_order_one", uniform_rank_order_one(plant)),
            ]
        else:
            sufficient = stabdet + [_cond("neutrally_stable", neutral)]

    if any(c["passed"] is False for c in necessary):
        return verdict("ruled_out_by_necessity", nec_thm, necessary)
    if all(c["passed"] is True for c in sufficient):
        return verdict("solvable_by_sufficiency", suf_thm, sufficient)
    merged = {c["name"]: c for c in necessary + sufficient}
    return verdict("gap", f"{nec_thm}/{suf_thm}", list(merged.values()))
