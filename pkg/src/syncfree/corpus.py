"""Seeded random plants and protocols used by sweeps, reproduction cases and tests."""

import numpy as np
from scipy.linalg import block_diag
from scipy.stats import ortho_group

from .plant import LTIPlant
from .synthesis import Protocol, static_protocol

# the agent models that recur throughout the examples
HARMONIC_OSCILLATOR = dict(A=[[0.0, 1.0], [-1.0, 0.0]], B=[[0.0], [1.0]], C=[[1.0, 0.0]])
DOUBLE_INTEGRATOR = dict(A=[[0.0, 1.0], [0.0, 0.0]], B=[[0.0], [1.0]], C=[[1.0, 0.0]])
EXAMPLE1 = dict(A=[[0.0, 1.0], [0.0, 0.0]], B=np.eye(2), C=np.eye(2))
EXAMPLE1_GAIN = -np.eye(2)
EXAMPLE2 = dict(
    A=[[0.0, 0.0, 1.0], [0.0, -1.0, 1.0], [0.0, 0.0, -1.0]],
    B=[[1.0, 0.0], [0.0, 0.0], [0.0, 1.0]],
    C=[[1.0, 0.0, 0.0], [0.0, 1.0, -2.0]],
)
EXAMPLE2_GAIN = np.array([[-1.0, 0.0], [0.0, 0.0]])
# full-state double integrator with a static gain that stabilizes the 3-cycle
DOUBLE_INTEGRATOR_FULL_STATE = dict(A=[[0.0, 1.0], [0.0, 0.0]], B=[[0.0], [1.0]], C=np.eye(2))
DOUBLE_INTEGRATOR_GAIN = np.array([[-1.0, -1.0]])


def rotation(theta):
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


# discrete-time counterparts: a rotation by one radian and the forward-difference integrator
DISCRETE_ANALOGS = {
    id(HARMONIC_OSCILLATOR): dict(HARMONIC_OSCILLATOR, A=rotation(1.0)),
    id(DOUBLE_INTEGRATOR): dict(DOUBLE_INTEGRATOR, A=[[1.0, 1.0], [0.0, 1.0]]),
    id(DOUBLE_INTEGRATOR_FULL_STATE): dict(DOUBLE_INTEGRATOR_FULL_STATE, A=[[1.0, 1.0], [0.0, 1.0]]),
}


def plant(spec, domain="continuous"):
    """Plant from one of the module-level specs; oscillators and integrators
    switch to their discrete-time counterparts when ``domain`` is discrete."""
    if domain == "discrete":
        spec = DISCRETE_ANALOGS.get(id(spec), spec)
    return LTIPlant(spec["A"], spec["B"], spec["C"], domain)


def random_stable_matrix(rng, k, domain):
    M = rng.normal(size=(k, k))
    if domain == "continuous":
        shift = np.max(np.linalg.eigvals(M).real) + rng.uniform(0.2, 1.5)
        return M - shift * np.eye(k)
    rho = np.max(np.abs(np.linalg.eigvals(M)))
    return M * rng.uniform(0.2, 0.9) / rho


def _boundary_blocks(rng, k, domain):
    blocks = []
    while k > 0:
        if k >= 2 and rng.random() < 0.7:
            w = rng.uniform(0.3, 2.5)
            blocks.append(np.array([[0.0, w], [-w, 0.0]]) if domain == "continuous" else rotation(w))
            k -= 2
        else:
            blocks.append(np.zeros((1, 1)) if domain == "continuous" else np.array([[rng.choice([-1.0, 1.0])]]))
            k -= 1
    return blocks


def random_neutral_matrix(rng, n, domain="continuous", n_boundary=None):
    """Boundary blocks (skew / rotation / 0 / +-1) plus a stable block, in a random orthonormal basis."""
    k = int(rng.integers(1, n + 1)) if n_boundary is None else n_boundary
    blocks = _boundary_blocks(rng, k, domain)
    if n - k:
        blocks.append(random_stable_matrix(rng, n - k, domain))
    M = block_diag(*blocks)
    U = ortho_group.rvs(n, random_state=rng) if n > 1 else np.eye(1)
    return U @ M @ U.T


def random_neutral_plant(rng, n_max=6, domain="continuous", m=None, p=None):
    n = int(rng.integers(1, n_max + 1))
    m = int(rng.integers(1, 3)) if m is None else m
    p = int(rng.integers(1, 3)) if p is None else p
    A = random_neutral_matrix(rng, n, domain)
    return LTIPlant(A, rng.normal(size=(n, m)), rng.normal(size=(p, n)), domain)


def random_plant(rng, n_max=5, domain="continuous"):
    """Mixed corpus: stable, neutral, Jordan-boundary and unstable plants,
    scalar and multivariable, occasionally rank-deficient B or C."""
    n = int(rng.integers(1, n_max + 1))
    m = int(rng.integers(1, 3))
    p = int(rng.integers(1, 3))
    kind = rng.choice(["stable", "neutral", "jordan", "unstable", "generic"])
    if kind == "stable":
        A = random_stable_matrix(rng, n, domain)
    elif kind == "neutral":
        A = random_neutral_matrix(rng, n, domain)
    elif kind == "jordan" and n >= 2:
        # a defective boundary eigenvalue, the rest stable
        A = np.zeros((n, n))
        A[:2, :2] = [[0.0, 1.0], [0.0, 0.0]] if domain == "continuous" else [[1.0, 1.0], [0.0, 1.0]]
        if n > 2:
            A[2:, 2:] = random_stable_matrix(rng, n - 2, domain)
        U = ortho_group.rvs(n, random_state=rng)
        A = U @ A @ U.T
    elif kind == "unstable":
        A = random_stable_matrix(rng, n, domain)
        if domain == "continuous":
            A = A + 2.5 * np.eye(n)
        else:
            A = 1.5 * A / np.max(np.abs(np.linalg.eigvals(A)))
    else:
        A = rng.normal(size=(n, n))
    B = rng.normal(size=(n, m))
    C = rng.normal(size=(p, n))
    if rng.random() < 0.15:
        B[:, :] = 0.0
        B[0, 0] = 1.0
    if rng.random() < 0.15:
        C[:, :] = 0.0
        C[0, -1] = 1.0
    return LTIPlant(A, B, C, domain)


def random_siso_minimal(rng, n_max=5):
    """Controllable-canonical SISO realization with random numerator; returns
    (plant, numerator coefficients, highest power first)."""
    n = int(rng.integers(1, n_max + 1))
    den = rng.normal(size=n)
    A = np.zeros((n, n))
    A[:-1, 1:] = np.eye(n - 1)
    A[-1, :] = -den[::-1]
    B = np.zeros((n, 1))
    B[-1, 0] = 1.0
    deg = int(rng.integers(0, n))
    num = np.zeros(n)
    num[: deg + 1] = rng.normal(size=deg + 1)
    num[deg] = num[deg] if abs(num[deg]) > 0.3 else 1.0
    C = num.reshape(1, n)
    # G(s) = sum_k num[k] s^k / (s^n + den[n-1] s^{n-1} + ... + den[0])
    return LTIPlant(A, B, C, "continuous"), num[: deg + 1][::-1]


def falsifier_corpus(n_cases=30, seed=0):
    """Discrete non-Schur plants with random protocols whose closed-loop
    characteristic polynomial depends on the network eigenvalue."""
    from .closedloop import char_poly_depends_on_lambda

    rng = np.random.default_rng(seed)
    cases = []
    while len(cases) < n_cases:
        n = int(rng.integers(1, 5))
        m = int(rng.integers(1, 3))
        p = int(rng.integers(1, 3))
        if rng.random() < 0.5:
            A = random_neutral_matrix(rng, n, "discrete")
        else:
            M = rng.normal(size=(n, n))
            A = M * rng.uniform(1.0, 1.6) / np.max(np.abs(np.linalg.eigvals(M)))
        pl = LTIPlant(A, rng.normal(size=(n, m)), rng.normal(size=(p, n)), "discrete")
        nc = int(rng.integers(0, 3))
        if nc == 0:
            pr = static_protocol(rng.normal(size=(m, p)) * 0.5)
        else:
            pr = Protocol(rng.normal(size=(nc, nc)) * 0.5, rng.normal(size=(nc, p)),
                          rng.normal(size=(m, nc)), np.zeros((m, p)), "none")
        if char_poly_depends_on_lambda(pl, pr):
            cases.append((pl, pr))
    return cases


def random_certifiable_plant(rng, n_max=6, domain="continuous"):
    """Random neutrally stable plant that is also stabilizable and detectable."""
    from .plant import pbh_detectable, pbh_stabilizable

    while True:
        p = random_neutral_plant(rng, n_max, domain)
        if pbh_stabilizable(p) and pbh_detectable(p):
            return p
