import numpy as np
import pytest
import scipy.linalg as sla

from syncfree import closedloop as cl, corpus, plant as pa, synthesis as sy
from syncfree.errors import ConditionsNotMet, NotNeutrallyStable
from syncfree.plant import LTIPlant


@pytest.fixture(scope="module")
def oscillator():
    p = corpus.plant(corpus.HARMONIC_OSCILLATOR)
    return p, *sy.synthesize_ct_with_bounds(p)


def test_oscillator_certificate(oscillator):
    p, pr, cert = oscillator
    assert cert.violations() == []
    assert cert.residual_neutral <= 1e-8 and cert.residual_lyap <= 1e-8
    assert cert.margin_boun >= 0 and cert.margin_small > 0
    # skew-symmetric A: the normalized boundary solution is the identity
    np.testing.assert_allclose(cert.P, np.eye(2), atol=1e-12)
    assert cert.delta == 2.0**-6
    assert pr.scaling == "local_bounds" and pr.n_c == 2
    np.testing.assert_allclose(pr.Ac, p.A + cert.H @ p.C)
    np.testing.assert_allclose(pr.Fc, -cert.delta * p.B.T @ cert.P)
    assert pa.spectral_abscissa(pr.Ac) == pytest.approx(-cert.epsilon)


def test_oscillator_protocol_is_stable_on_the_grid(oscillator):
    p, pr, _ = oscillator
    report = cl.grid_verify(p, pr, "P5", threshold=0.0)
    assert report.passed and report.passed_scaled


def test_neutral_lyapunov_inequality():
    rng = np.random.default_rng(0)
    for k in range(40):
        domain = ("continuous", "discrete")[k % 2]
        A = corpus.random_neutral_matrix(rng, int(rng.integers(1, 7)), domain)
        P = sy.neutral_lyapunov(A, domain)
        assert np.min(np.linalg.eigvalsh(P)) > 0
        assert np.max(np.linalg.eigvalsh(P)) == pytest.approx(1.0)
        assert sy.neutral_residual(A, P, domain) <= 1e-8


def test_neutral_lyapunov_rejects_jordan_block():
    with pytest.raises(NotNeutrallyStable):
        sy.neutral_lyapunov(np.array([[0.0, 1.0], [0.0, 0.0]]))


def test_kronecker_solve_matches_bartels_stewart():
    rng = np.random.default_rng(1)
    for _ in range(20):
        n = int(rng.integers(1, 7))
        F = corpus.random_stable_matrix(rng, n, "continuous")
        R = rng.normal(size=(n, n))
        R = R + R.T
        Q = sy._lyap_kron(F, R)
        np.testing.assert_allclose(Q, sla.solve_continuous_lyapunov(F.T, R), atol=1e-9)


@pytest.mark.parametrize("domain", ["continuous", "discrete"])
def test_observer_gain_stabilizes(domain):
    rng = np.random.default_rng(2)
    for _ in range(20):
        p = corpus.random_certifiable_plant(rng, 6, domain)
        H = sy.design_observer(p.A, p.C, domain)
        assert pa.is_asymptotically_stable(p.A + H @ p.C, domain)


def test_certificate_suite_on_random_plants():
    rng = np.random.default_rng(3)
    for _ in range(50):
        p = corpus.random_certifiable_plant(rng)
        pr, cert = sy.synthesize_ct_with_bounds(p)
        assert cert.violations() == []
        assert pa.classify(p, "P5").verdict == "solvable_by_sufficiency"
        # every grid sample of the open unit disc is strictly stable
        assert cl.grid_verify(p, pr, "P5", threshold=0.0).passed


@pytest.mark.parametrize("beta", [0.1, 10.0])
def test_certificate_survives_input_scaling(beta):
    rng = np.random.default_rng(4)
    for _ in range(10):
        p = corpus.random_certifiable_plant(rng)
        scaled = LTIPlant(p.A, beta * p.B, p.C)
        _, cert = sy.synthesize_ct_with_bounds(scaled)
        assert cert.violations() == []


def test_delta_adapts_to_input_gain():
    p = corpus.plant(corpus.HARMONIC_OSCILLATOR)
    deltas = [sy.synthesize_ct_with_bounds(LTIPlant(p.A, b * p.B, p.C))[1].delta for b in (0.1, 1, 10)]
    assert deltas[0] > deltas[1] > deltas[2]


def test_discrete_design():
    rng = np.random.default_rng(5)
    for _ in range(8):
        p = corpus.random_certifiable_plant(rng, 4, "discrete")
        pr, cert = sy.synthesize_dt_with_bounds(p)
        assert cert.violations() == []
        np.testing.assert_allclose(pr.Fc, -cert.delta * p.B.T @ cert.P @ p.A)
        assert cl.grid_verify(p, pr, "P5", threshold=0.0).passed
        assert pa.classify(p, "P5").verdict == "solvable_by_sufficiency"


def test_stable_plant_gets_zero_protocol():
    p = LTIPlant([[-1.0, 1.0], [0.0, -2.0]], [[0.0], [1.0]], [[1.0, 0.0]])
    pr, cert = sy.synthesize_ct_with_bounds(p)
    assert cert.trivial and pr.n_c == 0 and not pr.Dc.any()
    q = LTIPlant([[0.5]], [[1.0]], [[1.0]], "discrete")
    pr, cert = sy.synthesize_dt_with_bounds(q)
    assert cert.trivial and pr.n_c == 0


def test_preconditions():
    with pytest.raises(ConditionsNotMet, match="neutrally stable"):
        sy.synthesize_ct_with_bounds(corpus.plant(corpus.DOUBLE_INTEGRATOR))
    with pytest.raises(ConditionsNotMet, match="stabilizable"):
        sy.synthesize_ct_with_bounds(LTIPlant(np.diag([0.0, 0.0]), [[1.0], [1.0]], np.eye(2)))
    with pytest.raises(ConditionsNotMet):
        sy.synthesize_dt_with_bounds(corpus.plant(corpus.HARMONIC_OSCILLATOR))


def test_protocol_round_trip_and_transfer(oscillator):
    _, pr, _ = oscillator
    back = sy.Protocol.from_dict(pr.to_dict())
    for name in ("Ac", "Bc", "Fc", "Dc"):
        np.testing.assert_array_equal(getattr(pr, name), getattr(back, name))
    s = 0.3 + 2j
    expected = pr.Fc @ np.linalg.solve(s * np.eye(2) - pr.Ac, pr.Bc) + pr.Dc
    np.testing.assert_allclose(pr.transfer(s), expected)
    st = sy.static_protocol([[-1.0, 0.0], [0.0, -1.0]])
    assert st.n_c == 0 and st.variant == "P4"
    np.testing.assert_array_equal(st.transfer(1j), st.Dc)
