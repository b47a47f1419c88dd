import numpy as np
import pytest

import oracles
from conftest import dyad, k3, random_graph
from netgames.dgp import MC_PARAMS, NodeData, assemble_dataset, simulate_types
from netgames.errors import ConditionViolation
from netgames.graphs import PayoffGraph
from netgames.inference import SampleSelection, _run_chunk
from netgames.inference_fs import (
    FsModel,
    build_design_fs,
    e_fs_diag,
    fs_pipeline,
    lambda_bar,
    lambda_tilde,
    q_eps_fs,
)
from netgames.strategies import amplification


def sim_fs(g, beta, seed):
    d = simulate_types(g.n, 3, 2, None, seed)
    return d.with_outcome(assemble_dataset(g, d, MC_PARAMS.with_beta(beta), "fs"))


def test_dyad_lambda_tilde_and_design():
    assert lambda_tilde(dyad(), 0.5, 0, 0) == pytest.approx(4 / 3, abs=1e-15)
    assert lambda_bar(dyad(), 0.5, 0, 0) == pytest.approx(1.0)
    X1 = np.array([[2.0], [5.0]])
    Z = build_design_fs(dyad(), NodeData(X1, np.zeros((2, 1))), 0.5)
    assert Z[0, 0] == pytest.approx(2.0 + 2 / 3 * 5.0 + 1 / 3 * 2.0, abs=1e-14)


@pytest.mark.parametrize("seed,beta", [(1, 0.4), (2, -0.6), (3, 0.8)])
def test_design_matches_dense(seed, beta):
    g = random_graph(seed, n=40)
    d = sim_fs(g, 0.1, seed)
    Z = build_design_fs(g, d, beta)
    assert np.allclose(Z, oracles.design_fs(g, d.X1, d.X2, beta, range(g.n)), rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("seed,beta", [(4, 0.4), (5, -0.5)])
def test_kernel_matches_dense_and_pointwise(seed, beta):
    g = random_graph(seed, n=30)
    m = FsModel(g, sim_fs(g, 0.2, seed))
    b = np.array([beta])
    _, _, D0, Kv = m.chunk(b)
    q = m.plan.q(D0, Kv, b)[0]
    got = {(int(i), int(j)): v for i, j, v in zip(m.plan.pi, m.plan.pj, q)}
    for i in range(g.n):
        for j in range(g.n):
            if i == j:
                continue
            ref = oracles.q_fs(g, beta, i, j)
            assert got.get((i, j), 0.0) == pytest.approx(ref, rel=1e-11, abs=1e-13)
            assert q_eps_fs(g, beta, i, j) == pytest.approx(ref, rel=1e-11, abs=1e-13)
    e = m.plan.e_diag(D0, Kv, b)[0]
    for i in range(0, g.n, 3):
        assert e[i] == pytest.approx(oracles.e_fs(g, beta, i), rel=1e-12)
        assert e_fs_diag(g, beta, i) == pytest.approx(oracles.e_fs(g, beta, i), rel=1e-12)


def test_variance_factor_by_simulation_on_k3():
    g = k3()
    beta = 0.5
    amp = amplification(g, beta)
    A = g.row_normalized.toarray()
    Dm = np.diag(amp.lam_diag)
    R = np.eye(3) + beta * (A @ Dm + beta * A @ Dm @ amp.L.toarray())
    eps = np.random.default_rng(0).normal(size=(1_000_000, 3))
    r0 = eps @ R[0]
    sq = r0**2
    se = sq.std() / np.sqrt(sq.size)
    assert abs(sq.mean() - e_fs_diag(g, beta, 0)) < 3 * se


def test_pipeline_matches_dense_oracle():
    g = random_graph(7, n=70, kind="ba")
    d = sim_fs(g, 0.3, 1)
    for beta in (0.0, 0.3, -0.4):
        T, rho, V = fs_pipeline(beta, g, d)
        T0, rho0, V0, _, _ = oracles.pipeline(g, d.X1, d.X2, d.y, beta, q=oracles.q_fs, design=oracles.design_fs)
        assert T == pytest.approx(T0, rel=1e-8)
        assert np.allclose(rho, rho0, rtol=1e-8, atol=1e-8)
        assert np.allclose(V, V0, rtol=1e-6, atol=1e-6)


def test_residual_identity():
    # at the truth the FS residual equals (I + beta B) eps + eta
    g = random_graph(8, n=50)
    beta = 0.35
    d = sim_fs(g, beta, 2)
    Z = build_design_fs(g, d, beta)
    v = d.y - Z @ MC_PARAMS.rho
    A, D, L = oracles.dense_parts(g, beta)
    B = A @ D + beta * A @ D @ L
    assert np.allclose(v, (np.eye(g.n) + beta * B) @ d.eps + d.eta, atol=1e-11)


def test_two_hop_availability_required():
    path = PayoffGraph.from_edges(5, [(0, 1), (1, 2), (2, 3), (3, 4)])
    d = sim_fs(path, 0.0, 0)
    known = np.array([True, True, True, True, False])
    sample = SampleSelection(5, [2], known)
    with pytest.raises(ConditionViolation) as err:
        FsModel(path, d, sample)
    assert err.value.condition == "B1"
    FsModel(path, d, SampleSelection(5, [1], known))
    T = _run_chunk(FsModel(path, d, SampleSelection(5, [0, 1, 2], None)), np.array([0.0]))[0]
    assert T.shape == (1,)
