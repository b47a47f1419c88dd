"""Inference when agents are first-order sophisticated.

The design becomes Z1 = X1 + beta Abar D X1 + beta^2 lt X1 and
Z2 = Abar X2 + beta lb X2, where lb = Abar L and lt = Abar D L, and the
error is v = (I + beta B) eps + eta with B = Abar D + beta lt.  Dependence
between errors now reaches four hops.  Grid evaluation, confidence sets
and GMM steps are shared with the simple model.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .dgp import NodeData
from .errors import InvalidParameter
from .graphs import PayoffGraph
from .inference import (
    InstrumentSpec,
    KernelPlan,
    SampleSelection,
    SimpleModel,
    _apply_fixed,
    _require_available,
)
from .strategies import amplification

__all__ = [
    "FsModel",
    "build_design_fs",
    "lambda_tilde",
    "lambda_bar",
    "q_eps_fs",
    "e_fs_diag",
    "fs_pipeline",
]


def _two_step_paths(g: PayoffGraph):
    """All walks i -> k -> j as (first edge, second edge) position pairs."""
    reps = g.degrees[g.indices]
    e1 = np.repeat(np.arange(g.indices.size), reps)
    offs = np.arange(e1.size) - np.repeat(np.cumsum(reps) - reps, reps)
    e2 = g.indptr[g.indices[e1]] + offs
    return e1, e2


class FsModel(SimpleModel):
    name = "fs"

    def _check_conditions(self):
        _require_available(self.g, self.sample, hops=2, condition="B1")

    def _kernel_plan(self) -> KernelPlan:
        g = self.g
        n = g.n
        e1, e2 = _two_step_paths(g)
        self._e1, self._e2 = e1, e2
        p_i, p_k, p_j = g.edge_src[e1], g.indices[e1], g.indices[e2]
        keys_e = g.edge_src * n + g.indices
        keys_p = p_i * n + p_j
        keys = np.unique(np.concatenate([keys_e, keys_p]))
        kr, kc = keys // n, keys % n
        nnz = keys.size
        E, P = keys_e.size, keys_p.size
        self._asm_edge = sp.csr_matrix((np.ones(E), (np.searchsorted(keys, keys_e), np.arange(E))), shape=(nnz, E))
        self._asm_path = sp.csr_matrix((np.ones(P), (np.searchsorted(keys, keys_p), np.arange(P))), shape=(nnz, P))
        self._path_k = p_k
        self._path_i = p_i
        return KernelPlan(n, kr, kc, self.obs)

    def chunk(self, betas: np.ndarray):
        lam_d, lam_e = self._lam(betas)
        Lv = lam_e / self.deg[self.src][None, :]
        A = self.g.row_normalized
        X1, X2 = self.X1, self.X2
        LX1 = self._apply_L(Lv, X1)
        LX2 = self._apply_L(Lv, X2)
        bb = betas[:, None, None]
        DX1 = lam_d[:, :, None] * X1[None]
        Z1 = X1[None] + bb * _apply_fixed(A, DX1) + bb**2 * _apply_fixed(A, lam_d[:, :, None] * LX1)
        Z2 = (A @ X2)[None] + bb * _apply_fixed(A, LX2)
        Z = np.concatenate([Z1, Z2], axis=2)[:, self.obs, :]
        phi = self._instruments(LX1)
        # B = Abar D + beta lt on the closed two-hop pattern
        ev = lam_d[:, self.dst] / self.deg[self.src][None, :]
        k = self._path_k
        pv = lam_d[:, k] * lam_e[:, self._e2] / (self.deg[k] * self.deg[self._path_i])[None, :]
        Kv = (self._asm_edge @ ev.T).T + betas[:, None] * (self._asm_path @ pv.T).T
        D0 = np.ones_like(lam_d)
        return Z, phi, D0, Kv


def build_design_fs(g: PayoffGraph, data: NodeData, beta: float, sample: SampleSelection | None = None) -> np.ndarray:
    data = data if data.y is not None else data.with_outcome(np.zeros(data.n))
    m = FsModel(g, data, sample)
    return m.chunk(np.array([float(beta)]))[0][0]


# ---------------------------------------------------------------------------
# pointwise definitions, written out term by term


def _lam_lookup(g: PayoffGraph, amp, a: int, b: int) -> float:
    nb = g.neighbors(a)
    k = np.searchsorted(nb, b)
    return float(amp.lam_edge[g.indptr[a] + k])


def lambda_tilde(g: PayoffGraph, beta: float, i: int, j: int, amp=None) -> float:
    """(1/n_i) sum over k in N(i) with j in N(k) of lambda_kj / (n_k (1 - beta c_kk))."""
    amp = amp or amplification(g, beta)
    deg = g.degrees
    if deg[i] == 0:
        return 0.0
    tot = 0.0
    for k in g.neighbors(i):
        if g.has_edge(int(k), j):
            tot += _lam_lookup(g, amp, int(k), j) * amp.lam_diag[k] / deg[k]
    return tot / deg[i]


def lambda_bar(g: PayoffGraph, beta: float, i: int, j: int, amp=None) -> float:
    amp = amp or amplification(g, beta)
    deg = g.degrees
    if deg[i] == 0:
        return 0.0
    tot = 0.0
    for k in g.neighbors(i):
        if g.has_edge(int(k), j):
            tot += _lam_lookup(g, amp, int(k), j) / deg[k]
    return tot / deg[i]


def _open_two_hop(g: PayoffGraph, i: int) -> set:
    first = set(int(k) for k in g.neighbors(i))
    second = set()
    for k in first:
        second.update(int(x) for x in g.neighbors(k))
    return (first | second) - {i}


def q_eps_fs(g: PayoffGraph, beta: float, i: int, j: int) -> float:
    """Pair kernel of the sophisticated model, eight terms as defined."""
    if i == j:
        raise InvalidParameter("q is defined for distinct nodes")
    amp = amplification(g, beta)
    b = beta
    deg = g.degrees
    lam = amp.lam_diag
    lt = lambda a, c: lambda_tilde(g, beta, a, c, amp)
    Ni = set(int(k) for k in g.neighbors(i))
    Nj = set(int(k) for k in g.neighbors(j))
    N2i, N2j = _open_two_hop(g, i), _open_two_hop(g, j)
    ai = 1.0 + b * b * lt(i, i)
    aj = 1.0 + b * b * lt(j, j)
    out = 0.0
    if i in Nj:
        out += ai * lam[i] / deg[j]
    if i in N2j:
        out += b * ai * lt(j, i)
    if j in Ni:
        out += lam[j] * aj / deg[i]
    common = Ni & Nj
    if common:
        out += b / (deg[i] * deg[j]) * sum(lam[k] ** 2 for k in common)
    s5 = Ni & N2j
    if s5:
        out += b * b / deg[i] * sum(lam[k] * lt(j, k) for k in s5)
    if j in N2i:
        out += b * aj * lt(i, j)
    s7 = N2i & Nj
    if s7:
        out += b * b / deg[j] * sum(lt(i, k) * lam[k] for k in s7)
    s8 = N2i & N2j
    if s8:
        out += b**3 * sum(lt(i, k) * lt(j, k) for k in s8)
    return float(out)


def e_fs_diag(g: PayoffGraph, beta: float, i: int) -> float:
    """Variance factor of node i's sophisticated-model error, four terms."""
    amp = amplification(g, beta)
    b = beta
    deg = g.degrees
    lam = amp.lam_diag
    lt = lambda a, c: lambda_tilde(g, beta, a, c, amp)
    out = (1.0 + b * b * lt(i, i)) ** 2
    if deg[i]:
        nb = [int(k) for k in g.neighbors(i)]
        out += b * b / deg[i] ** 2 * sum(lam[k] ** 2 for k in nb)
        out += 2 * b**3 / deg[i] * sum(lam[k] * lt(i, k) for k in nb)
        out += b**4 * sum(lt(i, k) ** 2 for k in _open_two_hop(g, i))
    return float(out)


def fs_pipeline(beta: float, g: PayoffGraph, data: NodeData, sample=None, spec: InstrumentSpec | None = None):
    """T, rho-hat and V-hat of the sophisticated model at one beta."""
    from .inference import _run_chunk

    m = FsModel(g, data, sample, spec)
    T, rho, V, _, _ = _run_chunk(m, np.array([float(beta)]))
    return float(T[0]), rho[0], V[0]
