import numpy as np
import pytest

from syncfree import closedloop as cl, corpus, graph as gr, synthesis as sy
from syncfree.errors import VariantMismatch
from syncfree.plant import LTIPlant

from oracles import modal_energy_slopes


@pytest.fixture(scope="module")
def oscillator():
    p = corpus.plant(corpus.HARMONIC_OSCILLATOR)
    return p, *sy.synthesize_ct_with_bounds(p)


def test_example1_grid():
    p = corpus.plant(corpus.EXAMPLE1)
    report = cl.grid_verify(p, sy.static_protocol(corpus.EXAMPLE1_GAIN), "P4")
    assert report.passed and report.extrapolation == "extrapolated"
    assert len(report.samples) == 40 * 41


def test_example2_grid_with_static_gain():
    p = corpus.plant(corpus.EXAMPLE2)
    assert cl.grid_verify(p, sy.static_protocol(corpus.EXAMPLE2_GAIN), "P4").passed


def test_modal_matrix_blocks(oscillator):
    p, pr, _ = oscillator
    lam = 0.3 + 0.4j
    M = cl.modal_matrix(p, pr, lam, "P5")
    c = 1 - lam
    top = np.hstack([p.A + c * p.B @ pr.Dc @ p.C, p.B @ pr.Fc])
    bottom = np.hstack([c * pr.Bc @ p.C, pr.Ac])
    np.testing.assert_allclose(M, np.vstack([top, bottom]))
    st = sy.static_protocol([[-2.0]])
    np.testing.assert_allclose(cl.modal_matrix(p, st, 1.5, "P4"), p.A - 3.0 * p.B @ p.C)
    with pytest.raises(VariantMismatch):
        cl.modal_matrix(p, pr, 0.5, "P4")


def test_default_grids():
    p4 = cl.GridSpec.default("P4").points()
    assert np.all(p4.real > 0)
    p5 = cl.GridSpec.default("P5").points()
    assert np.all(np.abs(p5) < 1)
    for k in range(1, 7):
        assert np.min(np.abs(p5 - (1 - 10.0**-k))) < 1e-15
    g = cl.GridSpec.default("P5")
    back = cl.GridSpec.from_dict(g.to_dict())
    np.testing.assert_array_equal(g.points(), back.points())


def test_scaled_margin_near_one(oscillator):
    # margin shrinks in proportion to |1 - lambda| as lambda approaches 1
    p, pr, _ = oscillator
    m = [cl.stability_margin(cl.modal_matrix(p, pr, 1 - 10.0**-k, "P5"), "continuous") for k in (3, 4, 5)]
    assert m[0] / m[1] == pytest.approx(10, rel=0.05)
    assert m[1] / m[2] == pytest.approx(10, rel=0.05)


def test_network_check_agrees_with_grid_on_graph_eigenvalues(oscillator):
    p, pr, _ = oscillator
    ex1 = corpus.plant(corpus.EXAMPLE1)
    st = sy.static_protocol(corpus.EXAMPLE1_GAIN)
    for seed in range(50):
        g = gr.generate("random_spanning_tree", 2 + seed % 15, seed, (0.5, 2.0))
        if seed % 2:
            plant, prot, q, variant = p, pr, gr.default_bounds(g), "P5"
        else:
            plant, prot, q, variant = ex1, st, None, "P4"
        margins = cl.network_margins(plant, prot, g, q)
        lams = [lam for lam, _ in margins]
        report = cl.grid_verify(plant, prot, variant, cl.GridSpec.from_points(variant, lams))
        by_lam = {lam: m for lam, m, _ in report.samples}
        for lam, m in margins:
            assert abs(by_lam[lam] - m) <= 1e-10
        assert cl.network_stability_check(plant, prot, g, q)


def test_fragile_static_gain_on_cycles():
    p = corpus.plant(corpus.DOUBLE_INTEGRATOR_FULL_STATE)
    st = sy.static_protocol(corpus.DOUBLE_INTEGRATOR_GAIN)
    assert cl.network_stability_check(p, st, gr.generate("cycle", 3))
    assert not cl.network_stability_check(p, st, gr.generate("cycle", 100))


def test_falsifier_corpus():
    for plant, prot in corpus.falsifier_corpus(30, seed=0):
        v = cl.falsify_dt_no_bounds(plant, prot)
        assert v is not None and abs(v.lambda_star) <= 2.0**60
        assert v.lambda_star.real > 0 and v.spectral_radius > 1


def test_falsifier_no_violation_for_schur_plants():
    rng = np.random.default_rng(0)
    for _ in range(10):
        n = int(rng.integers(1, 5))
        p = LTIPlant(corpus.random_stable_matrix(rng, n, "discrete"), rng.normal(size=(n, 1)),
                     rng.normal(size=(1, n)), "discrete")
        assert cl.falsify_dt_no_bounds(p, sy.zero_protocol(p, "none")) is None


def test_falsifier_lambda_independent_unstable():
    p = corpus.plant(corpus.DOUBLE_INTEGRATOR, "discrete")
    v = cl.falsify_dt_no_bounds(p, sy.zero_protocol(p, "none"))
    assert v.reason == "lambda_independent_not_schur"
    with pytest.raises(ValueError):
        cl.falsify_dt_no_bounds(corpus.plant(corpus.HARMONIC_OSCILLATOR),
                                sy.zero_protocol(corpus.plant(corpus.HARMONIC_OSCILLATOR), "none"))


def test_positive_real_oscillator(oscillator):
    p, pr, _ = oscillator
    assert cl.positive_real_check(p, pr, "P5").passes


def _failing_cases(variant, count):
    """SISO plants with static gains whose loop violates the positive-real test."""
    rng = np.random.default_rng(11)
    out = []
    while len(out) < count:
        p = corpus.random_certifiable_plant(rng, 4)
        if p.m != 1 or p.p != 1:
            continue
        prot = sy.static_protocol([[rng.choice([-1.0, 1.0]) * rng.uniform(0.2, 3.0)]],
                                  "none" if variant == "P4" else "local_bounds")
        report = cl.positive_real_check(p, prot, variant, n_points=400)
        if not report.passes:
            out.append((p, prot, report))
    return out


@pytest.mark.parametrize("variant", ["P4", "P5"])
def test_positive_real_failure_implies_grid_failure(variant):
    for p, prot, report in _failing_cases(variant, 10):
        L = cl.loop_transfer(p, prot, 1j * report.worst_frequency, "GGc")
        # the mode with coupling c is marginal at s = j w when c L(j w) = -1
        lam = -1 / L if variant == "P4" else 1 + 1 / L
        if variant == "P4":
            assert lam.real > 0
        else:
            assert abs(lam) < 1
        t = np.linspace(-0.05, 0.05, 21)
        pts = [lam * (1 + tk) for tk in t]
        if variant == "P5":
            pts = [z for z in pts if abs(z) < 1]
        assert not cl.grid_verify(p, prot, variant, cl.GridSpec.from_points(variant, pts)).passed


def test_modal_lyapunov_decay(oscillator):
    p, pr, cert = oscillator
    assert modal_energy_slopes(p, pr, cert, np.random.default_rng(0)) <= 1e-9


def test_modal_lyapunov_decay_random_plants():
    rng = np.random.default_rng(1)
    for _ in range(3):
        p = corpus.random_certifiable_plant(rng, 4)
        pr, cert = sy.synthesize_ct_with_bounds(p)
        assert modal_energy_slopes(p, pr, cert, rng, n_lambda=5, T=20.0) <= 1e-9


def test_report_serialization(oscillator):
    p, pr, _ = oscillator
    report = cl.grid_verify(p, pr, "P5", cl.GridSpec.from_points("P5", [0.5, -0.5j]))
    d = report.to_dict()
    assert d["variant"] == "P5" and len(d["samples"]) == 2 and "tool" in d
