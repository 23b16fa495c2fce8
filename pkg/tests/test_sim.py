import io

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from syncfree import closedloop as cl, corpus, graph as gr, sim, synthesis as sy
from syncfree.errors import StepGuardViolation, VariantMismatch

from oracles import per_edge_zeta


@pytest.fixture(scope="module")
def oscillator():
    p = corpus.plant(corpus.HARMONIC_OSCILLATOR)
    return p, sy.synthesize_ct_with_bounds(p)[0]


def example1_config(n, seed, x0=None):
    g = gr.generate("random_spanning_tree", n, seed, (0.5, 2.0))
    p = corpus.plant(corpus.EXAMPLE1)
    if x0 is None:
        x0 = np.random.default_rng(seed).normal(size=(n, 2))
    return sim.NetworkConfig(p, sy.static_protocol(corpus.EXAMPLE1_GAIN), g, None, x0)


def test_single_agent_has_zero_error(oscillator):
    p, pr = oscillator
    g = gr.generate("cycle", 1)
    cfg = sim.NetworkConfig(p, pr, g, gr.default_bounds(g), [[1.0, -2.0]], [[0.5, 0.5]])
    trace = sim.simulate(cfg, 5.0)
    assert np.all(trace.sync_error == 0)
    assert sim.verdict(trace.sync_error) == "synchronized"


def test_identical_initial_states_stay_synchronized(oscillator):
    p, pr = oscillator
    g = gr.generate("random_spanning_tree", 8, 2, (0.5, 2.0))
    cfg = sim.NetworkConfig(p, pr, g, gr.default_bounds(g), np.tile([1.0, -0.3], (8, 1)),
                            np.tile([0.2, 0.1], (8, 1)))
    assert np.max(sim.simulate(cfg, 30.0).sync_error) < 1e-12


def test_example1_five_agents():
    trace = sim.simulate(example1_config(5, 0), 50.0, 0.01)
    assert trace.times[-1] == pytest.approx(50.0)
    assert trace.sync_error[-1] < 1e-6


def test_network_signal_matches_per_edge_sum(oscillator):
    p, pr = oscillator
    g = gr.generate("random_spanning_tree", 7, 4, (0.5, 2.0))
    rng = np.random.default_rng(0)
    X = rng.normal(size=(7, 2))
    Xc = rng.normal(size=(7, 2))
    for bounds, prot in ((None, pr.with_scaling("none")), (gr.default_bounds(g), pr)):
        cfg = sim.NetworkConfig(p, prot, g, bounds, X, Xc)
        dX, dXc = sim._NetworkOperator(cfg)(X, Xc)
        Z = per_edge_zeta(g.weights.tolist(), X @ p.C.T)
        if bounds is not None:
            Z = Z / (1 + bounds)[:, None]
        U = Xc @ prot.Fc.T + Z @ prot.Dc.T
        np.testing.assert_allclose(dX, X @ p.A.T + U @ p.B.T, atol=1e-12)
        np.testing.assert_allclose(dXc, Xc @ prot.Ac.T + Z @ prot.Bc.T, atol=1e-12)


def test_linear_in_initial_conditions(oscillator):
    p, pr = oscillator
    g = gr.generate("cycle", 6)
    rng = np.random.default_rng(1)
    x0, xc0 = rng.normal(size=(6, 2)), rng.normal(size=(6, 2))
    base = sim.simulate(sim.NetworkConfig(p, pr, g, gr.default_bounds(g), x0, xc0), 10.0)
    for alpha in (-2.5, 0.1, 7.0):
        scaled = sim.simulate(sim.NetworkConfig(p, pr, g, gr.default_bounds(g), alpha * x0, alpha * xc0), 10.0)
        ref = alpha * base.states
        assert np.max(np.abs(scaled.states - ref)) <= 1e-9 * np.max(np.abs(ref))


def test_rk4_fourth_order():
    cfg = example1_config(4, 3)
    bound = sim._NetworkOperator(cfg).norm_bound(cfg)
    h = sim.STEP_GUARD / bound
    T = 100 * h
    ref = sim.simulate(cfg, T, h / 8).x[-1]
    e1 = np.linalg.norm(sim.simulate(cfg, T, h).x[-1] - ref)
    e2 = np.linalg.norm(sim.simulate(cfg, T, h / 2).x[-1] - ref)
    assert 12 <= e1 / e2 <= 20


def test_step_guard():
    cfg = example1_config(5, 0)
    with pytest.raises(StepGuardViolation):
        sim.simulate(cfg, 1.0, 1.0)


def test_discrete_iteration_is_exact():
    p = corpus.plant(corpus.HARMONIC_OSCILLATOR, "discrete")
    pr = sy.static_protocol([[-0.1]])
    g = gr.generate("path", 3)
    x0 = np.arange(6.0).reshape(3, 2)
    trace = sim.simulate(sim.NetworkConfig(p, pr, g, None, x0), 5)
    L = gr.build_laplacian(g)
    M = np.kron(np.eye(3), p.A) + np.kron(L, p.B @ pr.Dc @ p.C)
    x = x0.ravel()
    for k in range(6):
        np.testing.assert_allclose(trace.x[k].ravel(), x, atol=1e-12)
        x = M @ x
    np.testing.assert_array_equal(trace.times, np.arange(6))


def test_config_validation(oscillator):
    p, pr = oscillator
    g = gr.generate("cycle", 3)
    with pytest.raises(VariantMismatch):
        sim.NetworkConfig(p, pr, g, None)
    with pytest.raises(VariantMismatch):
        sim.NetworkConfig(p, pr.with_scaling("none"), g, gr.default_bounds(g))


def test_modal_consistency_with_network_check():
    """Simulated verdict agrees with the modal check on 30 configurations.

    A horizon of 10 / |worst margin| only buys a decay of e^-10, and the
    Jordan-block transients of these agents add a polynomial factor, so the
    initial disagreement is normalized to 1e-5 for stable networks to cross
    the 1e-6 tolerance. Unstable networks still grow past 10 * tol.
    """
    rng = np.random.default_rng(2)
    ex1 = corpus.plant(corpus.EXAMPLE1)
    di = corpus.plant(corpus.DOUBLE_INTEGRATOR_FULL_STATE)
    outcomes = set()
    for k in range(30):
        if k % 2:
            n = int(rng.integers(2, 12))
            g = gr.generate("random_spanning_tree", n, k, (0.5, 2.0))
            p, pr = ex1, sy.static_protocol(corpus.EXAMPLE1_GAIN)
        else:
            n = int(rng.integers(3, 12))
            g = gr.generate("cycle", n)
            p, pr = di, sy.static_protocol(corpus.DOUBLE_INTEGRATOR_GAIN)
        x0 = rng.normal(size=(n, p.n))
        x0 *= 1e-5 / sim._max_pair_distance(x0)
        margin = cl.worst_network_margin(p, pr, g)
        trace = sim.simulate(sim.NetworkConfig(p, pr, g, None, x0), 10 / abs(margin), record_every=5)
        stable = cl.network_stability_check(p, pr, g)
        outcomes.add(stable)
        assert (sim.verdict(trace.sync_error) == "synchronized") == stable, (k, margin)
    assert outcomes == {True, False}


def test_verdict_rules():
    t = np.linspace(0, 50, 501)
    assert sim.verdict(np.exp(-t)) == "synchronized"
    assert sim.verdict(1e-3 * (1 + t)) == "not_synchronized"
    assert sim.verdict(1e-6 * (1 + 0.9 * np.sin(t))) == "undecided"
    with pytest.raises(ValueError):
        sim.verdict(np.ones(5), window=6)


def test_sync_error_two_agents():
    x = np.zeros((3, 2, 2))
    x[1, 0] = [1.0, 0.0]
    trace = sim.Trace(np.arange(3.0), x, np.zeros((3, 2, 0)), np.zeros(3))
    pairs, _ = sim.sync_error_series(trace)
    np.testing.assert_array_equal(pairs, [0, 1, 0])


@given(arrays(float, st.tuples(st.integers(1, 4), st.integers(1, 9), st.integers(1, 3)),
              elements=st.floats(-1e3, 1e3, allow_subnormal=False)))
@settings(max_examples=60, deadline=None)
def test_pair_metric_dominates_scaled_disagreement(x):
    trace = sim.Trace(np.arange(x.shape[0], dtype=float), x, np.zeros(x.shape[:2] + (0,)), None)
    pairs, dis = sim.sync_error_series(trace)
    assert np.all(pairs >= dis / np.sqrt(x.shape[1]) - 1e-9 * (1 + dis))


def test_trace_csv(oscillator):
    p, pr = oscillator
    g = gr.generate("cycle", 2)
    trace = sim.simulate(sim.NetworkConfig(p, pr, g, gr.default_bounds(g), [[1, 0], [0, 1]]), 1.0,
                         record_every=100)
    buf = io.StringIO()
    trace.write_csv(buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "time,agent,x0,x1,xc0,xc1,sync_error"
    assert len(lines) == 1 + 2 * len(trace.times)
