"""Modal closed loops parameterized by a network eigenvalue.

For a network eigenvalue ``lam`` the agent/protocol interconnection reduces to

    [[A + c B Dc C, B Fc],
     [c Bc C,       Ac  ]]

with coupling coefficient ``c = lam`` (Laplacian coupling, variant ``P4``) or
``c = 1 - lam`` (row-stochastic coupling, variant ``P5``). Synchronization
over a given graph is equivalent to stability of this matrix at every
non-synchronizing eigenvalue of the graph matrix.
"""

from dataclasses import dataclass, field

import numpy as np

from . import __version__
from . import graph as gr
from . import plant as pa
from .errors import (
    EigensolverFailure,
    FalsificationInconclusive,
    NoSpanningTree,
    NotScalarChannel,
    StepSizeTooLarge,
    VariantMismatch,
)
from .serialize import write_rows_csv

VARIANTS = ("P4", "P5")
GRID_PASS_THRESHOLD = 1e-6
NETWORK_MARGIN_THRESHOLD = 1e-9


def coupling(lam, variant):
    return lam if variant == "P4" else 1 - lam


def modal_matrix(plant, protocol, lam, variant):
    """Closed-loop matrix of one network mode (complex in general)."""
    protocol.check_plant(plant)
    if variant not in VARIANTS:
        raise VariantMismatch(f"variant must be one of {VARIANTS}")
    if variant != protocol.variant:
        raise VariantMismatch(
            f"protocol with scaling={protocol.scaling!r} pairs with {protocol.variant}, not {variant}"
        )
    c = coupling(complex(lam), variant)
    A, B, C = plant.A, plant.B, plant.C
    top_left = A + c * (B @ protocol.Dc @ C)
    if protocol.n_c == 0:
        return top_left.astype(complex)
    return np.block([
        [top_left, (B @ protocol.Fc).astype(complex)],
        [c * (protocol.Bc @ C), protocol.Ac.astype(complex)],
    ])


def stability_margin(M, domain):
    """-max Re eig (continuous) or 1 - spectral radius (discrete)."""
    try:
        ev = np.linalg.eigvals(M)
    except np.linalg.LinAlgError as exc:
        raise EigensolverFailure(str(exc)) from exc
    if ev.size == 0:
        return np.inf
    if domain == "continuous":
        return float(-np.max(ev.real))
    return float(1 - np.max(np.abs(ev)))


# --------------------------------------------------------------------------
# grid verification


@dataclass
class GridSpec:
    """Sampling of the lambda region.

    ``P4``: lam = r e^{i theta} over the open right half plane.
    ``P5``: lam = rho e^{i theta} over the open unit disc, plus ``extra``
    points (by default 1 - 10^-k, k = 1..6). ``explicit`` replaces the
    polar grid altogether.
    """

    variant: str
    radii: list = field(default_factory=list)
    angles: list = field(default_factory=list)
    extra: list = field(default_factory=list)
    explicit: list = None

    @classmethod
    def default(cls, variant):
        if variant == "P4":
            lo, hi = -np.pi / 2 + 1e-3, np.pi / 2 - 1e-3
            return cls("P4", list(np.logspace(-3, 3, 40)), list(np.linspace(lo, hi, 43)[1:-1]))
        if variant == "P5":
            return cls(
                "P5",
                list(np.linspace(0, 0.999, 40)),
                list(2 * np.pi * np.arange(48) / 48),
                [1 - 10.0**-k for k in range(1, 7)],
            )
        raise VariantMismatch(f"variant must be one of {VARIANTS}")

    @classmethod
    def from_points(cls, variant, points):
        return cls(variant, explicit=[complex(z) for z in points])

    def points(self):
        if self.explicit is not None:
            pts = np.asarray(self.explicit, dtype=complex)
        else:
            r = np.asarray(self.radii, dtype=float)[:, None]
            th = np.asarray(self.angles, dtype=float)[None, :]
            pts = np.concatenate([(r * np.exp(1j * th)).ravel(), np.asarray(self.extra, dtype=complex)])
            # rho = 0 repeats the origin once per angle
            pts = np.unique(np.round(pts.real, 15) + 1j * np.round(pts.imag, 15))
        order = np.lexsort((pts.imag, pts.real))
        return pts[order]

    def to_dict(self):
        return {
            "variant": self.variant,
            "radii": [float(v) for v in self.radii],
            "angles": [float(v) for v in self.angles],
            "extra": [complex(v) for v in self.extra],
            "explicit": None if self.explicit is None else [complex(v) for v in self.explicit],
        }

    @classmethod
    def from_dict(cls, d):
        def cplx(v):
            return complex(v["re"], v["im"]) if isinstance(v, dict) else complex(v)

        return cls(
            d["variant"],
            [float(v) for v in d.get("radii", [])],
            [float(v) for v in d.get("angles", [])],
            [cplx(v) for v in d.get("extra", [])],
            None if d.get("explicit") is None else [cplx(v) for v in d["explicit"]],
        )


@dataclass
class GridReport:
    variant: str
    domain: str
    spec: GridSpec
    samples: list
    worst_margin: float
    worst_lambda: complex
    worst_scaled_margin: float
    threshold: float = GRID_PASS_THRESHOLD
    extrapolation: str = "not_applicable"
    errors: list = field(default_factory=list)

    @property
    def passed(self):
        return bool(self.worst_margin > self.threshold) and not self.errors

    @property
    def passed_scaled(self):
        """Pass test on margin / |coupling|, which stays bounded away from zero
        for a good protocol as the coupling vanishes."""
        return bool(self.worst_scaled_margin > self.threshold) and not self.errors

    def to_dict(self):
        return {
            "tool": f"syncfree {__version__}",
            "variant": self.variant,
            "domain": self.domain,
            "grid": self.spec.to_dict(),
            "threshold": self.threshold,
            "worst_margin": self.worst_margin,
            "worst_lambda": complex(self.worst_lambda),
            "worst_scaled_margin": self.worst_scaled_margin,
            "passed": self.passed,
            "passed_scaled": self.passed_scaled,
            "extrapolation": self.extrapolation,
            "errors": self.errors,
            "samples": [
                {"lambda": complex(lam), "margin": m, "scaled_margin": sm} for lam, m, sm in self.samples
            ],
        }

    def write_csv(self, path_or_buf):
        rows = [(float(lam.real), float(lam.imag), m) for lam, m, _ in self.samples]
        write_rows_csv(path_or_buf, ["re_lambda", "im_lambda", "margin"], rows)


def grid_verify(plant, protocol, variant, grid=None, threshold=GRID_PASS_THRESHOLD):
    """Sample the modal stability margin over the lambda region of ``variant``."""
    grid = grid if grid is not None else GridSpec.default(variant)
    samples, errors = [], []
    for lam in grid.points():
        try:
            m = stability_margin(modal_matrix(plant, protocol, lam, variant), plant.domain)
        except EigensolverFailure as exc:
            errors.append({"lambda": complex(lam), "error": str(exc)})
            continue
        c = abs(coupling(lam, variant))
        samples.append((complex(lam), m, m / c if c > 0 else m))
    if samples:
        k = int(np.argmin([s[1] for s in samples]))
        worst, worst_lam = samples[k][1], samples[k][0]
        worst_scaled = min(s[2] for s in samples)
    else:
        worst, worst_lam, worst_scaled = -np.inf, complex("nan"), -np.inf
    report = GridReport(variant, plant.domain, grid, samples, worst, worst_lam, worst_scaled,
                        threshold, errors=errors)
    if variant == "P4" and plant.domain == "continuous" and grid.explicit is None and grid.radii:
        report.extrapolation = _high_gain_trend(grid, samples)
    return report


def _high_gain_trend(grid, samples):
    """'extrapolated' if, along every ray, the margin does not decrease over the
    five largest radii (evidence the margin persists beyond the radius cap)."""
    top = sorted(grid.radii)[-5:]
    by_lam = {s[0]: s[1] for s in samples}
    for th in grid.angles:
        ms = []
        for r in top:
            lam = complex(r * np.exp(1j * th))
            key = min(by_lam, key=lambda z: abs(z - lam))
            ms.append(by_lam[key])
        if np.any(np.diff(ms) < -1e-9 * max(1.0, abs(ms[0]))):
            return "not_extrapolated"
    return "extrapolated"


# --------------------------------------------------------------------------
# positive-real necessary check


@dataclass
class PositiveRealReport:
    passes: bool
    worst_frequency: float
    worst_value: float
    first_violation: float = None
    product: str = "GGc"

    def to_dict(self):
        return dict(self.__dict__)


def loop_transfer(plant, protocol, s, product):
    """Scalar -G(s)G_c(s) (``"GGc"``) or -G_c(s)G(s) (``"GcG"``).

    The sign makes the loop positive real exactly when positive coupling
    gains stabilize, matching ``u = Dc z`` with a stabilizing ``Dc < 0``.
    """
    G = pa.plant_transfer(plant, s)
    Gc = protocol.transfer(s)
    val = G @ Gc if product == "GGc" else Gc @ G
    return -complex(val[0, 0])


def positive_real_check(plant, protocol, variant, n_points=2000):
    """Frequency sweep of Re[-G G_c] >= 0 (P4) or Re[-G G_c] + 1/2 >= 0 (P5)."""
    protocol.check_plant(plant)
    if plant.p == 1:
        product = "GGc"
    elif plant.m == 1:
        product = "GcG"
    else:
        raise NotScalarChannel("positive-real check needs a scalar loop (m == 1 or p == 1)")
    offset = 0.0 if variant == "P4" else 0.5
    poles = np.concatenate([np.linalg.eigvals(plant.A), np.linalg.eigvals(protocol.Ac)
                            if protocol.n_c else np.zeros(0)])
    if plant.domain == "continuous":
        w = np.logspace(-4, 4, n_points)
        freqs = np.concatenate([-w[::-1], w])
        points = 1j * freqs
    else:
        freqs = 2 * np.pi * np.arange(n_points) / n_points
        points = np.exp(1j * freqs)
    worst_val, worst_f, first = np.inf, None, None
    for f, s in zip(freqs, points):
        if poles.size and np.min(np.abs(poles - s)) <= 1e-6:
            continue
        try:
            v = loop_transfer(plant, protocol, s, product).real + offset
        except pa.PoleAt:
            continue
        if v < worst_val:
            worst_val, worst_f = v, float(f)
        if first is None and v < -1e-9:
            first = float(f)
    return PositiveRealReport(first is None, worst_f, float(worst_val), first, product)


# --------------------------------------------------------------------------
# discrete-time falsifier for unscaled (Laplacian) coupling


@dataclass
class Violation:
    lambda_star: complex
    spectral_radius: float
    margin: float
    reason: str = "spectral_radius_exceeds_one"

    def to_dict(self):
        return dict(self.__dict__)


def _charpoly(M):
    return np.poly(M) if M.shape[0] else np.ones(1)


def char_poly_depends_on_lambda(plant, protocol, tol=1e-9):
    p1 = _charpoly(modal_matrix(plant, protocol, 1.0, "P4"))
    p2 = _charpoly(modal_matrix(plant, protocol, 2.0, "P4"))
    return bool(np.any(np.abs(p1 - p2) > tol))


def falsify_dt_no_bounds(plant, protocol, max_exponent=60, tol=1e-6):
    """Find a real-part-positive lambda where the unscaled discrete closed loop is unstable.

    Doubling search over |lam| = 1, 2, 4, ... 2^max_exponent along the
    arguments 0 and +-pi/4. Returns ``None`` (no violation) only when the
    characteristic polynomial is independent of lambda and the open-loop
    interconnection is Schur stable.
    """
    if plant.domain != "discrete":
        raise ValueError("falsifier applies to discrete-time plants")
    if protocol.scaling != "none":
        raise VariantMismatch("falsifier applies to unscaled (Laplacian) protocols")
    depends = char_poly_depends_on_lambda(plant, protocol)
    if not depends:
        M0 = modal_matrix(plant, protocol, 0.0, "P4")
        rho = float(np.max(np.abs(np.linalg.eigvals(M0)))) if M0.size else 0.0
        if rho < 1:
            return None
        return Violation(1.0 + 0j, rho, 1 - rho, "lambda_independent_not_schur")
    for k in range(max_exponent + 1):
        r = 2.0**k
        for angle in (0.0, np.pi / 4, -np.pi / 4):
            lam = r * np.exp(1j * angle) if angle else complex(r)
            M = modal_matrix(plant, protocol, lam, "P4")
            rho = float(np.max(np.abs(np.linalg.eigvals(M))))
            if rho > 1 + tol:
                return Violation(complex(lam), rho, 1 - rho)
    raise FalsificationInconclusive(
        f"characteristic polynomial depends on lambda but no violation up to 2^{max_exponent}"
    )


# --------------------------------------------------------------------------
# network-level check


def graph_eigenvalues(g, variant, bounds=None):
    """Non-synchronizing eigenvalues of the Laplacian (P4) or row-stochastic matrix (P5)."""
    if variant == "P4":
        M = gr.build_laplacian(g)
        target = 0.0
    else:
        if bounds is None:
            raise VariantMismatch("row-stochastic coupling needs local bounds")
        M = gr.to_row_stochastic(g, bounds)
        target = 1.0
    ev = gr.laplacian_spectrum(M)
    keep = np.abs(ev - target) > gr.SPECTRAL_TOL
    return ev[keep]


def network_margins(plant, protocol, g, bounds=None):
    if not gr.has_directed_spanning_tree(g):
        raise NoSpanningTree("graph has no directed spanning tree")
    variant = protocol.variant
    if (bounds is not None) != (variant == "P5"):
        raise VariantMismatch("local bounds must be given exactly when the protocol is scaled")
    return [
        (complex(lam), stability_margin(modal_matrix(plant, protocol, lam, variant), plant.domain))
        for lam in graph_eigenvalues(g, variant, bounds)
    ]


def network_stability_check(plant, protocol, g, bounds=None):
    """True iff every non-synchronizing network mode is asymptotically stable."""
    return all(m > NETWORK_MARGIN_THRESHOLD for _, m in network_margins(plant, protocol, g, bounds))


def worst_network_margin(plant, protocol, g, bounds=None):
    ms = [m for _, m in network_margins(plant, protocol, g, bounds)]
    return min(ms) if ms else np.inf


# --------------------------------------------------------------------------
# modal trajectories for the Lyapunov decay argument


@dataclass
class ModalTrace:
    times: np.ndarray
    phi: np.ndarray
    psi: np.ndarray
    phi_tilde: np.ndarray
    e: np.ndarray
    V1: np.ndarray
    V2: np.ndarray

    @property
    def V(self):
        return self.V1 + self.V2


def _rk4_step(M, x, h):
    k1 = M @ x
    k2 = M @ (x + h / 2 * k1)
    k3 = M @ (x + h / 2 * k2)
    k4 = M @ (x + h * k3)
    return x + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)


def modal_simulate(plant, protocol, P, Q, lam, x0, T, h):
    """RK4 trajectory of one scaled-coupling mode with V1 = e*Qe and V2 = phi~*P phi~.

    ``x0`` stacks the plant modal state phi and the protocol modal state psi.
    """
    M = modal_matrix(plant, protocol, lam, "P5")
    n = plant.n
    x = np.asarray(x0, dtype=complex)
    steps = int(round(T / h))
    X = np.empty((steps + 1, x.size), dtype=complex)
    X[0] = x
    c = 1 - complex(lam)

    def energy(v):
        pt = c * v[:n]
        e = v[n:] - pt
        return (e.conj() @ Q @ e).real + (pt.conj() @ P @ pt).real

    v_prev = energy(x)
    for k in range(steps):
        x = _rk4_step(M, x, h)
        v = energy(x)
        if v > 10 * v_prev and v_prev > 0:
            raise StepSizeTooLarge(f"V1 + V2 grew more than tenfold in one step at t={(k + 1) * h}")
        v_prev = v
        X[k + 1] = x
    phi, psi = X[:, :n], X[:, n:]
    pt = c * phi
    e = psi - pt
    V1 = np.einsum("ti,ij,tj->t", e.conj(), Q, e).real
    V2 = np.einsum("ti,ij,tj->t", pt.conj(), P, pt).real
    return ModalTrace(np.arange(steps + 1) * h, phi, psi, pt, e, V1, V2)
