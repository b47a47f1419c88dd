import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from conftest import dyad, k3, random_graph, small_graphs
from netgames.dgp import MC_PARAMS, ModelParams, NodeData, simulate_types
from netgames.errors import InvalidParameter
from netgames.graphs import gen_barabasi_albert, gen_erdos_renyi
from netgames.strategies import (
    amplification,
    ane_epsilon,
    ane_profile,
    ane_x1,
    best_response_fs,
    best_response_m,
    best_response_simple,
    build_weights,
    equilibrium_outcomes,
    equilibrium_residual,
    reflection_effect,
)


def unit_shock(n, at=0):
    eps = np.zeros(n)
    eps[at] = 1.0
    return NodeData(np.zeros((n, 1)), np.zeros((n, 1)), eps, np.zeros(n))


NULL = ModelParams(0.5, [0.0], [0.0])


def test_dyad_simple_and_equilibrium():
    d = unit_shock(2)
    assert np.allclose(best_response_simple(dyad(), d, NULL), [4 / 3, 2 / 3], atol=1e-15)
    assert np.allclose(equilibrium_outcomes(dyad(), d, NULL), [4 / 3, 2 / 3], atol=1e-15)


def test_k3_simple():
    y = best_response_simple(k3(), unit_shock(3), NULL)
    assert np.allclose(y, [6 / 5, 0.4, 0.4], atol=1e-15)


def test_dyad_first_order_sophisticated():
    # lambda-tilde_11 = lambda_22 lambda_21 = 4/3 on the dyad
    y = best_response_fs(dyad(), unit_shock(2), NULL)
    assert y[0] == pytest.approx(4 / 3, abs=1e-15)
    assert y[1] == pytest.approx(2 / 3, abs=1e-15)


def test_k3_order_zero_weights():
    W = build_weights(k3(), NULL, 0)
    w = W.eps_weights(0)
    assert w[0] == pytest.approx(6 / 5, abs=1e-15)
    assert W.eps_weights(1)[0] == pytest.approx(0.4, abs=1e-15)
    assert np.allclose(W.x1_weights(0)[0], 6 / 5 * NULL.gamma)


def test_reflection_effect():
    assert reflection_effect(dyad(), 0.5, 0) == pytest.approx(1 / 3)
    assert reflection_effect(k3(), 0.5, 0) == pytest.approx(1 / 5)


def test_dyad_ane():
    for model in ("simple", "equilibrium"):
        assert ane_epsilon(dyad(), 0.5, model) == pytest.approx(2 / 3, abs=1e-12)
    assert ane_x1(dyad(), 0.5, 1.0) == pytest.approx(2 / 3, abs=1e-15)


def _dense_simple(g, d, p):
    """Best response from the dense closed form with scalar lambda weights."""
    n = g.n
    u = d.X1 @ p.gamma + d.eps
    x2 = d.X2 @ p.delta
    y = d.eta.copy()
    for i in range(n):
        Ni = sorted(g.adjacency(i))
        lii = oracles.lam(g, p.beta, i, i)
        y[i] += lii * u[i]
        for j in Ni:
            lij = oracles.lam(g, p.beta, i, j)
            y[i] += (p.beta * lii * u[j] + x2[j]) * lij / len(Ni)
    return y


@settings(max_examples=40, deadline=None)
@given(small_graphs(), st.floats(-0.95, 0.95), st.integers(0, 2**31))
def test_simple_response_matches_dense_formula(g, beta, seed):
    d = simulate_types(g.n, 3, 2, None, seed)
    p = MC_PARAMS.with_beta(beta)
    assert np.allclose(best_response_simple(g, d, p), _dense_simple(g, d, p), rtol=1e-12, atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(small_graphs(), st.floats(-0.95, 0.95), st.integers(0, 2**31), st.integers(0, 6))
def test_weights_and_vector_recursion_agree(g, beta, seed, m):
    d = simulate_types(g.n, 3, 2, None, seed)
    p = MC_PARAMS.with_beta(beta)
    via_w = build_weights(g, p, m).apply(d)
    assert np.allclose(via_w, best_response_m(g, d, p, m), rtol=1e-12, atol=1e-11)
    if m == 0:
        assert np.allclose(via_w, best_response_simple(g, d, p), rtol=1e-12, atol=1e-11)
    if m == 1:
        assert np.allclose(via_w, best_response_fs(g, d, p), rtol=1e-12, atol=1e-11)


@settings(max_examples=30, deadline=None)
@given(small_graphs(), st.floats(-0.95, 0.95), st.integers(0, 2**31))
def test_equilibrium_solves_fixed_point(g, beta, seed):
    d = simulate_types(g.n, 3, 2, None, seed)
    p = MC_PARAMS.with_beta(beta)
    y = equilibrium_outcomes(g, d, p)
    assert equilibrium_residual(g, d, p, y) < 1e-10


def test_equilibrium_on_larger_graphs():
    rng = np.random.default_rng(4)
    for g in (gen_erdos_renyi(3000, 3.0, rng), gen_barabasi_albert(3000, 2, rng=rng)):
        d = simulate_types(g.n, 3, 2, None, 1)
        p = MC_PARAMS.with_beta(-0.7)
        assert equilibrium_residual(g, d, p, equilibrium_outcomes(g, d, p)) < 1e-10


def test_eta_passes_through_responses():
    g = random_graph(8, n=20)
    d = simulate_types(20, 3, 2, None, 0)
    p = MC_PARAMS.with_beta(0.3)
    bumped = NodeData(d.X1, d.X2, d.eps, d.eta + 1.0)
    assert np.allclose(best_response_m(g, bumped, p, 2) - best_response_m(g, d, p, 2), 1.0)


def test_isolated_node_plays_own_type():
    from netgames.graphs import PayoffGraph

    g = PayoffGraph.from_edges(3, [(0, 1)])
    d = simulate_types(3, 3, 2, None, 0)
    p = MC_PARAMS.with_beta(0.6)
    y = best_response_simple(g, d, p)
    assert y[2] == pytest.approx(d.X1[2] @ p.gamma + d.eps[2] + d.eta[2])


def _dense_ane(W):
    n = W.shape[0]
    return (W.sum() - np.trace(W)) / n


def _dense_weights(g, beta, m):
    p = ModelParams(beta, [1.0], [0.0])
    return build_weights(g, p, m).W_eps.toarray()


@settings(max_examples=25, deadline=None)
@given(small_graphs(min_n=3), st.floats(-0.9, 0.9))
def test_ane_profile_matches_dense(g, beta):
    prof = ane_profile(g, [beta], orders=(0, 1, 2, 3, 5))
    for m in (0, 1, 2, 3, 5):
        assert prof[m][0] == pytest.approx(_dense_ane(_dense_weights(g, beta, m)), rel=1e-9, abs=1e-11)
    Weq = np.linalg.inv(np.eye(g.n) - beta * g.row_normalized.toarray())
    assert prof["eq"][0] == pytest.approx(_dense_ane(Weq), rel=1e-8, abs=1e-10)


def test_ane_zero_at_zero_beta():
    g = random_graph(3, n=60)
    prof = ane_profile(g, [0.0])
    assert all(v[0] == 0.0 for v in prof.values())


def test_beta_outside_unit_interval():
    with pytest.raises(InvalidParameter):
        amplification(dyad(), 1.0)
    with pytest.raises(InvalidParameter):
        build_weights(dyad(), NULL, -1)
