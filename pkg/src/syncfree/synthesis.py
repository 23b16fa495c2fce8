"""Observer-based low-gain protocol design for locally bounded neighborhoods.

The continuous-time design builds

    chi' = (A + H C) chi - H zeta_scaled
    u    = -delta B^T P chi

from a neutral Lyapunov matrix P, an observer gain H, a shifted Lyapunov
solution Q with decay rate epsilon and a dyadic gain delta. Every
intermediate inequality is recorded in a :class:`SynthesisCertificate`.
The discrete-time design has the same shape with u = -delta B^T P A chi and
delta tuned against the unit-disc grid check.
"""

import json
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from . import plant as pa
from .errors import (
    ConditionsNotMet,
    DeltaUnderflow,
    DimensionMismatch,
    GridSearchFailure,
    IllConditionedBasis,
    NotDetectable,
    NotHurwitz,
    NotNeutrallyStable,
    RiccatiFailure,
)
from .serialize import matrix_from_json

SCALINGS = ("none", "local_bounds")
OBSERVER_MARGIN = 1e-3
MAX_BASIS_COND = 1e8
DELTA_EXPONENTS = range(0, 61)


@dataclass(frozen=True, eq=False)
class Protocol:
    """Linear protocol x_c' = Ac x_c + Bc z, u = Fc x_c + Dc z.

    ``z`` is the raw network signal (``scaling="none"``) or the signal divided
    by ``1 + q_i`` (``scaling="local_bounds"``). ``Ac`` may be 0x0 for a static
    protocol.
    """

    Ac: np.ndarray
    Bc: np.ndarray
    Fc: np.ndarray
    Dc: np.ndarray
    scaling: str = "none"

    def __post_init__(self):
        Dc = np.atleast_2d(np.array(self.Dc, dtype=float))
        m, p = Dc.shape
        Ac = np.array(self.Ac, dtype=float)
        Ac = np.zeros((0, 0)) if Ac.size == 0 else np.atleast_2d(Ac)
        nc = Ac.shape[0]
        Bc = np.array(self.Bc, dtype=float).reshape(nc, p)
        Fc = np.array(self.Fc, dtype=float).reshape(m, nc)
        if Ac.shape != (nc, nc):
            raise DimensionMismatch(f"Ac must be square, got {Ac.shape}")
        if self.scaling not in SCALINGS:
            raise ValueError(f"scaling must be one of {SCALINGS}, got {self.scaling!r}")
        for M in (Ac, Bc, Fc, Dc):
            M.setflags(write=False)
        object.__setattr__(self, "Ac", Ac)
        object.__setattr__(self, "Bc", Bc)
        object.__setattr__(self, "Fc", Fc)
        object.__setattr__(self, "Dc", Dc)

    @property
    def n_c(self):
        return self.Ac.shape[0]

    @property
    def variant(self):
        return "P4" if self.scaling == "none" else "P5"

    def check_plant(self, plant):
        if self.Dc.shape != (plant.m, plant.p):
            raise DimensionMismatch(
                f"protocol maps {self.Dc.shape[1]} outputs to {self.Dc.shape[0]} inputs; "
                f"plant has p={plant.p}, m={plant.m}"
            )

    def with_scaling(self, scaling):
        return Protocol(self.Ac, self.Bc, self.Fc, self.Dc, scaling)

    def transfer(self, s):
        """G_c(s) = Fc (sI - Ac)^{-1} Bc + Dc."""
        if self.n_c == 0:
            return self.Dc.astype(complex)
        return pa.evaluate_transfer(self.Ac, self.Bc, self.Fc, s) + self.Dc

    def to_dict(self):
        return {"Ac": self.Ac, "Bc": self.Bc, "Fc": self.Fc, "Dc": self.Dc, "scaling": self.scaling}

    @classmethod
    def from_dict(cls, d):
        Dc = matrix_from_json(d["Dc"], "Dc")
        m, p = Dc.shape
        nc = len(d["Ac"])
        Ac = np.asarray(d["Ac"], dtype=float).reshape(nc, nc)
        Bc = np.asarray(d["Bc"], dtype=float).reshape(nc, p)
        Fc = np.asarray(d["Fc"], dtype=float).reshape(m, nc)
        return cls(Ac, Bc, Fc, Dc, d.get("scaling", "none"))

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def static_protocol(Dc, scaling="none"):
    Dc = np.atleast_2d(np.asarray(Dc, dtype=float))
    m, p = Dc.shape
    return Protocol(np.zeros((0, 0)), np.zeros((0, p)), np.zeros((m, 0)), Dc, scaling)


def zero_protocol(plant, scaling="local_bounds"):
    return static_protocol(np.zeros((plant.m, plant.p)), scaling)


@dataclass
class SynthesisCertificate:
    P: np.ndarray
    H: np.ndarray
    epsilon: float
    Q: np.ndarray
    delta: float
    residual_neutral: float
    residual_lyap: float
    margin_boun: float
    margin_small: float
    domain: str = "continuous"
    trivial: bool = False
    grid_margin: float = None
    extra: dict = field(default_factory=dict)

    def violations(self, tol=1e-8):
        """Names of certificate inequalities that do not hold."""
        bad = []
        if np.min(np.linalg.eigvalsh(self.P)) <= 0:
            bad.append("P_positive_definite")
        if np.min(np.linalg.eigvalsh(self.Q)) <= 0:
            bad.append("Q_positive_definite")
        if not self.residual_neutral <= tol:
            bad.append("residual_neutral")
        if not self.residual_lyap <= tol:
            bad.append("residual_lyap")
        if not self.margin_boun >= 0:
            bad.append("margin_boun")
        if not self.margin_small > 0:
            bad.append("margin_small")
        if not (self.epsilon > 0 and self.delta > 0):
            bad.append("positive_scalars")
        return bad

    def to_dict(self):
        return {
            "P": self.P, "H": self.H, "epsilon": self.epsilon, "Q": self.Q,
            "delta": self.delta, "residual_neutral": self.residual_neutral,
            "residual_lyap": self.residual_lyap, "margin_boun": self.margin_boun,
            "margin_small": self.margin_small, "domain": self.domain,
            "trivial": self.trivial, "grid_margin": self.grid_margin, **self.extra,
        }


# --------------------------------------------------------------------------
# building blocks


def _sym(M):
    return (M + M.T) / 2


def neutral_lyapunov(A, domain="continuous"):
    """P > 0 with A^T P + P A <= 0 (or A^T P A - P <= 0 in discrete time).

    A is split by an ordered real Schur form and a Sylvester decoupling into a
    boundary block and a strictly stable block. The boundary block is
    diagonalizable by neutral stability and gets P = V^{-H} V^{-1}; the stable
    block gets the strict Lyapunov solution with right-hand side -I.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    n = A.shape[0]
    if not pa.matrix_is_neutrally_stable(A, domain):
        raise NotNeutrallyStable("A has eigenvalues outside the closed stable region "
                                 "or a non-semi-simple boundary eigenvalue")

    def boundary(re, im=None):
        lam = re + 1j * im if im is not None else re
        return bool(pa.on_boundary(lam, domain))

    T, U, k = sla.schur(A, output="real", sort=boundary)
    # schur counts a conjugate pair as two; k is the size of the boundary block
    S11, S12, S22 = T[:k, :k], T[:k, k:], T[k:, k:]
    M = U.copy()
    if 0 < k < n:
        X = sla.solve_sylvester(S11, -S22, -S12)
        Y = np.eye(n)
        Y[:k, k:] = X
        M = U @ Y
    blocks = []
    if k > 0:
        ev, V = np.linalg.eig(S11)
        cond = np.linalg.cond(V)
        if not np.isfinite(cond) or cond > MAX_BASIS_COND:
            raise IllConditionedBasis(cond)
        W = np.linalg.inv(V)
        blocks.append(_sym((W.conj().T @ W).real))
    if k < n:
        if domain == "continuous":
            P22 = sla.solve_continuous_lyapunov(S22.T, -np.eye(n - k))
        else:
            P22 = sla.solve_discrete_lyapunov(S22.T, np.eye(n - k))
        blocks.append(_sym(P22))
    Pd = sla.block_diag(*blocks)
    Minv = np.linalg.inv(M)
    P = _sym(Minv.T @ Pd @ Minv)
    return P / np.max(np.linalg.eigvalsh(P))


def neutral_residual(A, P, domain):
    R = A.T @ P + P @ A if domain == "continuous" else A.T @ P @ A - P
    return float(np.max(np.linalg.eigvalsh(_sym(R))))


def design_observer(A, C, domain="continuous"):
    """Observer gain H making A + HC asymptotically stable with margin 1e-3.

    Uses the stabilizing solution S of the dual Riccati equation with identity
    weights: H = -S C^T (continuous) or H = -A S C^T (I + C S C^T)^{-1}.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    C = np.atleast_2d(np.asarray(C, dtype=float))
    n, p = A.shape[0], C.shape[0]
    if not pa.pbh_detectable(pa.LTIPlant(A, np.zeros((n, 1)), C, domain)):
        raise NotDetectable("(C, A) is not detectable")

    def margin_ok(F):
        if domain == "continuous":
            return pa.spectral_abscissa(F) <= -OBSERVER_MARGIN
        return pa.spectral_radius(F) <= 1 - OBSERVER_MARGIN

    if margin_ok(A):
        return np.zeros((n, p))
    try:
        if domain == "continuous":
            S = sla.solve_continuous_are(A.T, C.T, np.eye(n), np.eye(p))
            H = -S @ C.T
        else:
            S = sla.solve_discrete_are(A.T, C.T, np.eye(n), np.eye(p))
            H = -A @ S @ C.T @ np.linalg.inv(np.eye(p) + C @ S @ C.T)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise RiccatiFailure(str(exc)) from exc
    if not np.all(np.isfinite(H)) or not margin_ok(A + H @ C):
        raise RiccatiFailure("Riccati solution does not yield the required observer margin")
    return H


def _lyap_kron(F, R):
    """Solve F^T Q + Q F = R through the vectorized (Kronecker) linear system."""
    n = F.shape[0]
    I = np.eye(n)
    K = np.kron(I, F.T) + np.kron(F.T, I)
    q = np.linalg.solve(K, R.reshape(-1, order="F"))
    return _sym(q.reshape(n, n, order="F"))


def epsilon_and_Q(A_HC):
    """epsilon = |spectral abscissa| and Q solving (A_HC + eps/2 I)^T Q + Q (...) = -I."""
    A_HC = np.atleast_2d(np.asarray(A_HC, dtype=float))
    alpha = pa.spectral_abscissa(A_HC)
    if not alpha < 0:
        raise NotHurwitz(f"spectral abscissa {alpha!r} is not negative")
    eps = abs(alpha)
    n = A_HC.shape[0]
    Q = _lyap_kron(A_HC + eps / 2 * np.eye(n), -np.eye(n))
    return eps, Q


def lyap_residual(A_HC, Q, eps):
    n = A_HC.shape[0]
    return float(np.linalg.norm(A_HC.T @ Q + Q @ A_HC + eps * Q + np.eye(n), 2))


def discrete_epsilon_and_Q(A_HC):
    """Discrete analog: (A_HC)^T Q A_HC - (1 - eps) Q + I = 0 with eps = (1 - rho^2)/2."""
    A_HC = np.atleast_2d(np.asarray(A_HC, dtype=float))
    rho = pa.spectral_radius(A_HC)
    if not rho < 1:
        raise NotHurwitz(f"spectral radius {rho!r} is not below one")
    eps = (1 - rho**2) / 2
    n = A_HC.shape[0]
    F = A_HC / np.sqrt(1 - eps)
    Q = _sym(sla.solve_discrete_lyapunov(F.T, np.eye(n) / (1 - eps)))
    return eps, Q


def discrete_lyap_residual(A_HC, Q, eps):
    n = A_HC.shape[0]
    return float(np.linalg.norm(A_HC.T @ Q @ A_HC - (1 - eps) * Q + np.eye(n), 2))


def delta_margins(P, Q, B, eps, delta):
    """(min eig of eps Q - 2 delta (QBB'P + PBB'Q), min eig of I - 8 delta (PBB'P + QBB'Q))."""
    BB = B @ B.T
    n = P.shape[0]
    boun = eps * Q - 2 * delta * _sym(Q @ BB @ P + P @ BB @ Q)
    small = np.eye(n) - 8 * delta * _sym(P @ BB @ P + Q @ BB @ Q)
    return float(np.min(np.linalg.eigvalsh(boun))), float(np.min(np.linalg.eigvalsh(small)))


def choose_delta(P, Q, B, epsilon):
    """Largest delta in {1, 1/2, ..., 2^-60} satisfying both low-gain inequalities."""
    for k in DELTA_EXPONENTS:
        delta = 2.0**-k
        boun, small = delta_margins(P, Q, B, epsilon, delta)
        if boun >= 0 and small > 0:
            return delta
    raise DeltaUnderflow("no delta >= 2^-60 satisfies the low-gain inequalities")


# --------------------------------------------------------------------------
# full designs


def _require(plant, domain):
    if plant.domain != domain:
        raise ConditionsNotMet(f"{domain} plant", f"got a {plant.domain} plant")
    if not pa.pbh_stabilizable(plant):
        raise ConditionsNotMet("stabilizable")
    if not pa.pbh_detectable(plant):
        raise ConditionsNotMet("detectable")
    if not pa.is_neutrally_stable(plant):
        raise ConditionsNotMet("neutrally stable")


def _certificate_parts(plant):
    A, B, C = plant.A, plant.B, plant.C
    domain = plant.domain
    P = neutral_lyapunov(A, domain)
    H = design_observer(A, C, domain)
    A_HC = A + H @ C
    if domain == "continuous":
        eps, Q = epsilon_and_Q(A_HC)
        res_lyap = lyap_residual(A_HC, Q, eps)
    else:
        eps, Q = discrete_epsilon_and_Q(A_HC)
        res_lyap = discrete_lyap_residual(A_HC, Q, eps)
    delta = choose_delta(P, Q, B, eps)
    return P, H, eps, Q, delta, res_lyap


def synthesize_ct_with_bounds(plant):
    """Continuous-time protocol and certificate for neutrally stable agents."""
    _require(plant, "continuous")
    P, H, eps, Q, delta, res_lyap = _certificate_parts(plant)
    trivial = pa.is_asymptotically_stable(plant.A, "continuous")
    boun, small = delta_margins(P, Q, plant.B, eps, delta)
    cert = SynthesisCertificate(
        P=P, H=H, epsilon=eps, Q=Q, delta=delta,
        residual_neutral=neutral_residual(plant.A, P, "continuous"),
        residual_lyap=res_lyap, margin_boun=boun, margin_small=small,
        domain="continuous", trivial=trivial,
    )
    if trivial:
        return zero_protocol(plant, "local_bounds"), cert
    A_HC = plant.A + H @ plant.C
    protocol = Protocol(A_HC, -H, -delta * plant.B.T @ P, np.zeros((plant.m, plant.p)), "local_bounds")
    return protocol, cert


def synthesize_dt_with_bounds(plant, grid=None):
    """Discrete-time analog with u = -delta B^T P A chi and grid-tuned delta.

    delta starts at the largest dyadic value meeting the same low-gain
    inequalities as the continuous design and is halved until every sample of
    the unit-disc grid is strictly Schur stable. Low-gain margins are tiny, so
    the 1e-6 pass threshold is recorded in the certificate but not required.
    """
    from .closedloop import GRID_PASS_THRESHOLD, GridSpec, grid_verify

    _require(plant, "discrete")
    P, H, eps, Q, delta0, res_lyap = _certificate_parts(plant)
    trivial = pa.is_asymptotically_stable(plant.A, "discrete")
    if trivial:
        boun, small = delta_margins(P, Q, plant.B, eps, delta0)
        cert = SynthesisCertificate(
            P=P, H=H, epsilon=eps, Q=Q, delta=delta0,
            residual_neutral=neutral_residual(plant.A, P, "discrete"),
            residual_lyap=res_lyap, margin_boun=boun, margin_small=small,
            domain="discrete", trivial=True,
        )
        return zero_protocol(plant, "local_bounds"), cert
    grid = grid if grid is not None else GridSpec.default("P5")
    A_HC = plant.A + H @ plant.C
    k0 = int(round(-np.log2(delta0)))
    for k in range(k0, DELTA_EXPONENTS.stop):
        delta = 2.0**-k
        protocol = Protocol(A_HC, -H, -delta * plant.B.T @ P @ plant.A,
                            np.zeros((plant.m, plant.p)), "local_bounds")
        report = grid_verify(plant, protocol, "P5", grid, threshold=0.0)
        if report.passed:
            boun, small = delta_margins(P, Q, plant.B, eps, delta)
            cert = SynthesisCertificate(
                P=P, H=H, epsilon=eps, Q=Q, delta=delta,
                residual_neutral=neutral_residual(plant.A, P, "discrete"),
                residual_lyap=res_lyap, margin_boun=boun, margin_small=small,
                domain="discrete", grid_margin=report.worst_margin,
                extra={"grid_scaled_margin": report.worst_scaled_margin,
                       "grid_passed_threshold": bool(report.worst_margin > GRID_PASS_THRESHOLD)},
            )
            return protocol, cert
    raise GridSearchFailure("no delta >= 2^-60 makes every unit-disc grid sample Schur stable")
