import numpy as np
import pytest
from hypothesis import strategies as st

from netgames.graphs import PayoffGraph, gen_barabasi_albert, gen_erdos_renyi


def dyad():
    return PayoffGraph.from_edges(2, [(0, 1)])


def k3():
    return PayoffGraph.from_edges(3, [(0, 1), (1, 2), (0, 2)])


def random_graph(seed, n=None, kind=None):
    rng = np.random.default_rng(seed)
    n = n or int(rng.integers(6, 51))
    kind = kind or ("er" if rng.random() < 0.5 else "ba")
    if kind == "er":
        return gen_erdos_renyi(n, float(rng.uniform(1.5, 4.0)), rng)
    return gen_barabasi_albert(n, int(rng.integers(1, 3)), seed_size=5, seed_p=0.5, rng=rng)


@st.composite
def small_graphs(draw, min_n=2, max_n=25):
    n = draw(st.integers(min_n, max_n))
    pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
    picked = draw(st.lists(st.sampled_from(pairs), max_size=3 * n, unique=True)) if pairs else []
    return PayoffGraph.from_edges(n, picked)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
