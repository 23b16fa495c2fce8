import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from syncfree import graph as gr
from syncfree.errors import BoundViolation, InvalidGraph

from oracles import circulant_cycle_eigenvalues, has_root_by_bfs, loop_laplacian, match_sets


def random_digraph(rng, n, density):
    W = (rng.random((n, n)) < density) * rng.uniform(0.1, 3.0, (n, n))
    np.fill_diagonal(W, 0.0)
    return gr.WeightedDigraph(W)


@st.composite
def adjacency(draw, max_n=8):
    n = draw(st.integers(1, max_n))
    W = draw(arrays(float, (n, n), elements=st.floats(0, 5, allow_subnormal=False)))
    mask = draw(arrays(bool, (n, n)))
    W = W * mask
    np.fill_diagonal(W, 0.0)
    return W


@given(adjacency())
@settings(max_examples=80, deadline=None)
def test_laplacian_matches_entrywise_definition(W):
    L = gr.build_laplacian(gr.WeightedDigraph(W))
    np.testing.assert_allclose(L, loop_laplacian(W.tolist()), atol=1e-12)
    assert np.max(np.abs(L.sum(axis=1))) <= 1e-12


@given(adjacency())
@settings(max_examples=80, deadline=None)
def test_spanning_tree_agrees_with_exhaustive_reachability(W):
    assert gr.has_directed_spanning_tree(gr.WeightedDigraph(W)) == has_root_by_bfs(W.tolist())


def test_spanning_tree_spectral_equivalence():
    rng = np.random.default_rng(7)
    seen = set()
    for _ in range(200):
        n = int(rng.integers(2, 61))
        g = random_digraph(rng, n, rng.uniform(0.5, 4.0) / n)
        tree = gr.has_directed_spanning_tree(g)
        seen.add(tree)
        assert tree == (gr.zero_eigenvalue_multiplicity(gr.build_laplacian(g)) == 1)
    assert seen == {True, False}


def test_example_spanning_trees():
    # two disjoint 2-cycles have no root
    g = gr.WeightedDigraph.from_edges(4, [(0, 1, 1), (1, 0, 1), (2, 3, 1), (3, 2, 1)])
    assert not gr.has_directed_spanning_tree(g)
    assert gr.zero_eigenvalue_multiplicity(gr.build_laplacian(g)) == 2
    assert gr.has_directed_spanning_tree(gr.WeightedDigraph([[0.0]]))
    assert gr.has_directed_spanning_tree(gr.generate("star", 6))


@pytest.mark.parametrize("N", [3, 7, 20])
def test_cycle_spectrum_is_circulant(N):
    L = gr.build_laplacian(gr.generate("cycle", N))
    assert match_sets(gr.laplacian_spectrum(L), circulant_cycle_eigenvalues(N), 1e-9)


def test_path_laplacian_by_hand():
    L = gr.build_laplacian(gr.generate("path", 3, weight_range=(2, 2)))
    np.testing.assert_array_equal(L, [[0, 0, 0], [-2, 2, 0], [0, -2, 2]])


def test_row_stochastic_form():
    rng = np.random.default_rng(3)
    for _ in range(100):
        n = int(rng.integers(1, 40))
        g = gr.generate("random_spanning_tree", n, int(rng.integers(1 << 30)), (0.1, 5.0))
        q = g.in_degree + rng.uniform(1e-3, 3.0, n)
        D = gr.to_row_stochastic(g, q)
        L = gr.build_laplacian(g)
        assert np.max(np.abs(D.sum(axis=1) - 1)) <= 1e-12
        assert D.min() >= -1e-12 and D.max() <= 1 + 1e-12
        np.testing.assert_allclose(D, np.eye(n) - L / (1 + q)[:, None], atol=1e-12)
        assert np.all(np.abs(gr.row_stochastic_spectrum(D)) <= 1 + 1e-9)


def test_bounds_validation():
    g = gr.generate("complete", 4, weight_range=(1, 1))
    with pytest.raises(BoundViolation) as info:
        gr.check_bounds(g, [3.0, 3.5, 4, 4])
    assert info.value.agent == 0
    q = gr.default_bounds(g)
    np.testing.assert_array_equal(q, [4, 4, 4, 4])
    # d_ii = 1 - d_in(i) / (1 + q_i) = 2 / (2 + d_in(i)) when q_i = d_in(i) + 1
    np.testing.assert_allclose(np.diag(gr.to_row_stochastic(g, q)), 2 / 5)


@given(st.floats(0, 1, exclude_max=True), st.floats(0, 2 * np.pi))
@settings(max_examples=200, deadline=None)
def test_scalar_inequality_inside_unit_disc(r, theta):
    lam = r * np.exp(1j * theta)
    assert abs(1 - lam) ** 2 <= 2 * (1 - lam).real + 1e-12


@pytest.mark.parametrize("kind", gr.GRAPH_KINDS)
def test_generators_contain_spanning_tree_and_are_deterministic(kind):
    for n in (1, 2, 9):
        a = gr.generate(kind, n, seed=5, weight_range=(0.5, 2))
        b = gr.generate(kind, n, seed=5, weight_range=(0.5, 2))
        assert gr.has_directed_spanning_tree(a)
        np.testing.assert_array_equal(a.weights, b.weights)


def test_invalid_graphs_rejected():
    with pytest.raises(InvalidGraph):
        gr.WeightedDigraph([[0, -1], [1, 0]])
    with pytest.raises(InvalidGraph):
        gr.WeightedDigraph([[1, 0], [1, 0]])
    with pytest.raises(InvalidGraph):
        gr.WeightedDigraph(np.zeros((2, 3)))
    with pytest.raises(InvalidGraph):
        gr.generate("cycle", 3, weight_range=(0, 0))
    with pytest.raises(InvalidGraph):
        gr.generate("lattice", 3)


def test_dict_round_trip():
    g = gr.generate("random_spanning_tree", 12, seed=1, weight_range=(0.5, 2))
    h = gr.WeightedDigraph.from_dict(g.to_dict())
    np.testing.assert_array_equal(g.weights, h.weights)
    assert gr.laplacian_csv(g).count("\n") == 12
