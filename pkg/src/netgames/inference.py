"""GMM inference for the simple-type model with network-dependent errors.

For a candidate beta the outcome equation is linear, y = Z(beta) rho + v,
so rho is concentrated out by two-step GMM and the overidentification
statistic T(beta) is profiled over a grid.  The grid is processed in
chunks with every per-beta quantity stacked along a leading axis; the
sparse network sums (neighbor averages, pair kernels) are done with
fixed assembly matrices so only the beta-dependent values change.

The error of node i is v = R eps + eta with R = D0 + beta K for a
diagonal D0 and a sparse K, so for i != j

    E[v_i v_j] = sigma_eps^2 beta q_ij,   q = offdiag(D0 K' + K D0 + beta K K').
"""

from __future__ import annotations

import copy
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy import stats

from .dgp import NodeData
from .errors import (
    ConditionViolation,
    EmptyConfidenceSet,
    InvalidParameter,
    RankDeficientDesign,
    SingularInstruments,
)
from .graphs import PayoffGraph, ball
from .strategies import ane_x1, amplification

__all__ = [
    "SampleSelection",
    "InstrumentSpec",
    "KernelPlan",
    "SimpleModel",
    "GridResult",
    "InferenceOutput",
    "build_design",
    "build_instruments",
    "whiten_instruments",
    "first_step_rho",
    "q_eps",
    "estimate_lambda_hat",
    "gmm_rho",
    "pd_repair",
    "test_statistic",
    "make_grid",
    "evaluate_grid",
    "confidence_set_beta",
    "confidence_interval_a_rho",
    "confidence_set_ane",
    "chi2_quantile",
    "normal_quantile",
    "estimate",
]

PD_FLOOR = 0.005


def chi2_quantile(p: float, dof: int) -> float:
    return float(stats.chi2.ppf(p, dof))


def normal_quantile(p: float) -> float:
    return float(stats.norm.ppf(p))


# ---------------------------------------------------------------------------
# sample and specification


@dataclass
class SampleSelection:
    """Observed nodes N* and what else the econometrician can see.

    ``known`` flags nodes whose covariates and degree data are available
    (all nodes by default).  ``nonoverlapping`` marks a sample in which no
    two observed nodes share a neighbor; the pair part of the covariance
    estimator is then dropped.  ``tilde_neighbor`` holds, per observed
    node, the neighbor used by the information-sharing test (-1 if none).
    """

    n: int
    observed: np.ndarray
    known: np.ndarray | None = None
    nonoverlapping: bool = False
    tilde_neighbor: np.ndarray | None = None

    def __post_init__(self):
        self.observed = np.unique(np.asarray(self.observed, dtype=np.int64))
        if self.observed.size and (self.observed[0] < 0 or self.observed[-1] >= self.n):
            raise InvalidParameter("observed node id out of range")
        if self.known is not None:
            self.known = np.asarray(self.known, dtype=bool)

    @classmethod
    def full(cls, g: PayoffGraph) -> "SampleSelection":
        return cls(g.n, np.arange(g.n))

    @property
    def n_obs(self) -> int:
        return int(self.observed.size)

    @property
    def mask(self) -> np.ndarray:
        m = np.zeros(self.n, dtype=bool)
        m[self.observed] = True
        return m

    def known_mask(self) -> np.ndarray:
        return np.ones(self.n, dtype=bool) if self.known is None else self.known


@dataclass(frozen=True)
class InstrumentSpec:
    """Instrument columns: neighbor-weighted X1 plus elementwise powers.

    Powers apply to the non-constant columns of X1 (column 0 is the
    intercept) and to all columns of X2.
    """

    x1_powers: tuple = (2,)
    x2_powers: tuple = (2, 3)
    neighbor_x1: bool = True
    downweight: bool = False

    def n_columns(self, d_x1: int, d_x2: int) -> int:
        return (d_x1 if self.neighbor_x1 else 0) + (d_x1 - 1) * len(self.x1_powers) + d_x2 * len(self.x2_powers)


def _fixed_instruments(X1: np.ndarray, X2: np.ndarray, spec: InstrumentSpec) -> np.ndarray:
    cols = [X1[:, 1:] ** p for p in spec.x1_powers] + [X2**p for p in spec.x2_powers]
    return np.concatenate(cols, axis=1) if cols else np.zeros((X1.shape[0], 0))


# ---------------------------------------------------------------------------
# kernel assembly


def _assembly(rows: np.ndarray, n_out: int) -> sp.csr_matrix:
    """Sparse (n_out x len(rows)) matrix summing inputs into ``rows``."""
    m = rows.size
    return sp.csr_matrix((np.ones(m), (rows, np.arange(m))), shape=(n_out, m))


class StackedPattern:
    """A fixed CSR pattern replicated for a stack of value vectors.

    ``matrix(data, block=False)`` stacks the B copies vertically, giving a
    (B r x c) matrix that maps one shared input to B outputs;
    ``block=True`` places them on the diagonal of a (B r x B c) matrix.
    """

    def __init__(self, indptr: np.ndarray, indices: np.ndarray, shape: tuple[int, int]):
        self.indptr = np.asarray(indptr, dtype=np.int64)
        self.indices = np.asarray(indices, dtype=np.int64)
        self.shape = shape
        self._cache: dict = {}

    def matrix(self, data: np.ndarray, block: bool = False) -> sp.csr_matrix:
        B = data.shape[0]
        key = (B, block)
        if key not in self._cache:
            nnz = self.indices.size
            r, c = self.shape
            ip = (self.indptr[None, :-1] + nnz * np.arange(B)[:, None]).ravel()
            ip = np.append(ip, B * nnz)
            ind = np.tile(self.indices, B)
            if block:
                ind = ind + np.repeat(np.arange(B, dtype=np.int64) * c, nnz)
            self._cache[key] = (ip, ind, (B * r, B * c if block else c))
        ip, ind, shape = self._cache[key]
        return sp.csr_matrix((np.ascontiguousarray(data).ravel(), ind, ip), shape=shape)

    def apply(self, data: np.ndarray, X: np.ndarray) -> np.ndarray:
        """Stack of products M_b X_b (or M_b X for a shared 2-d X)."""
        B = data.shape[0]
        r = self.shape[0]
        if X.ndim == 2:
            out = self.matrix(data) @ X
        else:
            out = self.matrix(data, block=True) @ X.reshape(-1, X.shape[-1])
        return out.reshape(B, r, -1)


def _apply_fixed(A: sp.csr_matrix, X: np.ndarray) -> np.ndarray:
    """A @ X_b for every slice of a (B, n, k) stack."""
    B, n, k = X.shape
    out = A @ np.moveaxis(X, 0, 1).reshape(n, B * k)
    return np.moveaxis(out.reshape(A.shape[0], B, k), 0, 1)


@dataclass(eq=False)
class KernelPlan:
    """Pair structure of q = offdiag(D0 K' + K D0 + beta K K') on a fixed pattern.

    ``kr, kc`` give the sparsity pattern of K.  Pairs are restricted to
    observed nodes and indexed in observed-sample positions ``pi, pj``.
    """

    n: int
    kr: np.ndarray
    kc: np.ndarray
    obs: np.ndarray
    pi: np.ndarray = field(init=False)
    pj: np.ndarray = field(init=False)

    def __post_init__(self):
        n = self.n
        pos = np.full(n, -1, dtype=np.int64)
        pos[self.obs] = np.arange(self.obs.size)
        kr, kc = self.kr, self.kc
        off = np.flatnonzero(kr != kc)
        # first-order terms: entry (r, c) feeds pairs (r, c) and (c, r)
        a_src = np.concatenate([off, off])
        a_i = np.concatenate([kr[off], kc[off]])
        a_j = np.concatenate([kc[off], kr[off]])
        # second-order terms: two entries in the same column
        order = np.argsort(kc, kind="stable")
        col_sorted = kc[order]
        starts = np.searchsorted(col_sorted, np.arange(n))
        sizes = np.bincount(kc, minlength=n)
        reps = sizes[col_sorted]
        ta = np.repeat(order, reps)
        # partner offsets inside each column group
        grp_start = np.repeat(starts[col_sorted], reps)
        within = np.arange(ta.size) - np.repeat(np.cumsum(reps) - reps, reps)
        tb = order[grp_start + within]
        keep = kr[ta] != kr[tb]
        ta, tb = ta[keep], tb[keep]
        t_i, t_j = kr[ta], kr[tb]
        # restrict to observed pairs
        ka = (pos[a_i] >= 0) & (pos[a_j] >= 0)
        kt = (pos[t_i] >= 0) & (pos[t_j] >= 0)
        a_src, a_i, a_j = a_src[ka], a_i[ka], a_j[ka]
        ta, tb, t_i, t_j = ta[kt], tb[kt], t_i[kt], t_j[kt]
        keys = np.unique(np.concatenate([a_i * n + a_j, t_i * n + t_j]))
        self.pair_keys = keys
        self.pi = pos[keys // n]
        self.pj = pos[keys % n]
        self.n_pairs = keys.size
        self._a_src = a_src
        self._a_col = kc[a_src]
        self._a_pair = np.searchsorted(keys, a_i * n + a_j)
        self._ta, self._tb = ta, tb
        self._t_pair = np.searchsorted(keys, t_i * n + t_j)
        self._asm_a = _assembly(self._a_pair, keys.size)
        self._asm_t = _assembly(self._t_pair, keys.size)
        indptr = np.zeros(self.obs.size + 1, dtype=np.int64)
        np.cumsum(np.bincount(self.pi, minlength=self.obs.size), out=indptr[1:])
        self.pair_pattern = StackedPattern(indptr, self.pj, (self.obs.size, self.obs.size))
        self._diag_entries = np.flatnonzero(kr == kc)

    def edge_pairs(self, g: PayoffGraph) -> np.ndarray:
        """Indices of pairs that are graph edges."""
        i, j = self.obs[self.pi], self.obs[self.pj]
        if self.n_pairs == 0:
            return np.zeros(0, dtype=np.int64)
        adj = g.adjacency_matrix
        hit = np.asarray(adj[i, j]).ravel() > 0
        return np.flatnonzero(hit)

    def q(self, D0: np.ndarray, Kv: np.ndarray, betas: np.ndarray) -> np.ndarray:
        """Pair values q for each beta; ``D0`` is (B, n), ``Kv`` is (B, nnz)."""
        first = Kv[:, self._a_src] * D0[:, self._a_col]
        second = Kv[:, self._ta] * Kv[:, self._tb]
        qa = (self._asm_a @ first.T).T
        qt = (self._asm_t @ second.T).T
        return qa + betas[:, None] * qt

    def e_diag(self, D0: np.ndarray, Kv: np.ndarray, betas: np.ndarray) -> np.ndarray:
        """Diagonal of R R' for every node, shape (B, n)."""
        B = Kv.shape[0]
        kdiag = np.zeros((B, self.n))
        d = self._diag_entries
        kdiag[:, self.kr[d]] = Kv[:, d]
        sq = np.zeros((B, self.n))
        for b in range(B):
            sq[b] = np.bincount(self.kr, weights=Kv[b] ** 2, minlength=self.n)
        bb = betas[:, None]
        return D0**2 + 2 * bb * D0 * kdiag + bb**2 * sq


# ---------------------------------------------------------------------------
# models


def _require_available(g: PayoffGraph, sample: SampleSelection, hops: int, condition: str):
    """Check that nodes within ``hops`` of the sample have known covariates."""
    known = sample.known_mask()
    if not known[sample.observed].all():
        raise ConditionViolation(condition, "an observed node lacks covariates")
    reach = sample.mask.astype(float)
    A = g.adjacency_matrix
    for h in range(1, hops + 1):
        reach = reach + A @ reach
        bad = np.flatnonzero((reach > 0) & ~known)
        if bad.size:
            what = "neighbor" if h == 1 else f"{h}-hop neighbor"
            raise ConditionViolation(condition, f"{what} {int(bad[0])} of an observed node is not available")


class SimpleModel:
    """Design, instruments and error kernel of the simple-type model.

    Everything that does not depend on beta is computed once here; the
    ``chunk`` method returns the stacked per-beta arrays.
    """

    name = "simple"

    def __init__(self, g: PayoffGraph, data: NodeData, sample: SampleSelection | None = None, spec: InstrumentSpec | None = None):
        self.g = g
        self.data = data
        self.sample = sample or SampleSelection.full(g)
        self.spec = spec or InstrumentSpec()
        if data.n != g.n:
            raise InvalidParameter("data and graph sizes differ")
        self.obs = self.sample.observed
        if self.obs.size == 0:
            raise InvalidParameter("empty sample")
        self._check_conditions()
        if data.y is None:
            raise InvalidParameter("outcome y is required for estimation")
        self.y = data.y[self.obs]
        self.d = data.d_x1 + data.d_x2
        self.M = self.spec.n_columns(data.d_x1, data.d_x2)
        if self.M <= self.d:
            raise InvalidParameter(f"need more instruments than regressors (M={self.M}, d={self.d})")
        cc = g.centrality
        self.c_diag = cc.c_diag
        self.c_edge = cc.c_edge
        self.deg = g.degrees.astype(float)
        self.src, self.dst = g.edge_src, g.indices
        self.L_pattern = StackedPattern(g.indptr, g.indices, (g.n, g.n))
        self.X1, self.X2 = data.X1, data.X2
        self.fixed_phi = _fixed_instruments(self.X1[self.obs], self.X2[self.obs], self.spec)
        self.weights = 1.0 / np.sqrt(self.deg[self.obs] + 1.0) if self.spec.downweight else None
        self.plan = self._kernel_plan()
        self.adj_pairs = self.plan.edge_pairs(g)

    def with_outcome(self, y: np.ndarray) -> "SimpleModel":
        """Same graph and covariates with a new outcome vector."""
        new = copy.copy(self)
        new.data = self.data.with_outcome(y)
        new.y = new.data.y[self.obs]
        return new

    # -- structure ------------------------------------------------------
    def _check_conditions(self):
        _require_available(self.g, self.sample, hops=1, condition="B")

    def _kernel_plan(self) -> KernelPlan:
        return KernelPlan(self.g.n, self.src, self.dst, self.obs)

    # -- per beta -------------------------------------------------------
    def _lam(self, betas):
        bb = betas[:, None]
        lam_d = 1.0 / (1.0 - bb * self.c_diag[None, :])
        lam_e = 1.0 / (1.0 - bb * self.c_edge[None, :])
        return lam_d, lam_e

    def _apply_L(self, Lv: np.ndarray, X: np.ndarray) -> np.ndarray:
        """L(beta) X for each beta; ``Lv`` holds the edge values, shape (B, E)."""
        return self.L_pattern.apply(Lv, X)

    def chunk(self, betas: np.ndarray):
        """Return (Z, phi, D0, Kv) for the given betas."""
        lam_d, lam_e = self._lam(betas)
        Lv = lam_e / self.deg[self.src][None, :]
        LX1 = self._apply_L(Lv, self.X1)
        LX2 = self._apply_L(Lv, self.X2)
        bb = betas[:, None, None]
        Z1 = lam_d[:, :, None] * (self.X1[None] + bb * LX1)
        Z = np.concatenate([Z1, LX2], axis=2)[:, self.obs, :]
        phi = self._instruments(LX1)
        Kv = lam_d[:, self.src] * Lv
        return Z, phi, lam_d, Kv

    def _instruments(self, LX1: np.ndarray) -> np.ndarray:
        B = LX1.shape[0]
        parts = []
        if self.spec.neighbor_x1:
            parts.append(LX1[:, self.obs, :])
        parts.append(np.broadcast_to(self.fixed_phi, (B,) + self.fixed_phi.shape))
        phi = np.concatenate(parts, axis=2)
        if self.weights is not None:
            phi = phi * self.weights[None, :, None]
        return phi


# ---------------------------------------------------------------------------
# stacked GMM steps


def _sym(A):
    return 0.5 * (A + np.swapaxes(A, -1, -2))


def pd_repair(mat: np.ndarray, c: float = PD_FLOOR) -> np.ndarray:
    """Raise eigenvalues below ``c`` to ``c``; works on stacks of matrices."""
    w, V = np.linalg.eigh(_sym(np.asarray(mat, dtype=float)))
    if np.all(w >= c):
        return np.asarray(mat, dtype=float).copy()
    w = np.maximum(w, c)
    return (V * w[..., None, :]) @ np.swapaxes(V, -1, -2)


def _whiten(phi: np.ndarray, tol: float = 1e-10):
    """Return (phi_tilde, ok) where ok flags betas with a regular S_phiphi."""
    n = phi.shape[-2]
    S = np.swapaxes(phi, -1, -2) @ phi / n
    w, V = np.linalg.eigh(_sym(S))
    ok = w[..., 0] > tol
    w = np.where(ok[..., None], w, 1.0)
    Sinv_half = (V * (1.0 / np.sqrt(w))[..., None, :]) @ np.swapaxes(V, -1, -2)
    return phi @ Sinv_half, ok, w[..., 0]


def whiten_instruments(phi: np.ndarray) -> np.ndarray:
    """phi S^{-1/2} with S = phi'phi / n and the symmetric inverse root."""
    phi = np.asarray(phi, dtype=float)
    out, ok, wmin = _whiten(phi)
    if not np.all(ok):
        n = phi.shape[-2]
        w = np.linalg.eigvalsh(_sym(np.swapaxes(phi, -1, -2) @ phi / n))
        raise SingularInstruments(f"instrument second-moment matrix is singular (min eigenvalue {w.min():.3e})", float(w.min()))
    return out


def _solve_stack(A, b):
    return np.linalg.solve(A, b[..., None])[..., 0]


def build_design(g: PayoffGraph, data: NodeData, beta: float, sample: SampleSelection | None = None) -> np.ndarray:
    """Rows of Z(beta) for the observed nodes: [D(X1 + beta L X1), L X2]."""
    m = SimpleModel(g, data.with_outcome(np.zeros(data.n)) if data.y is None else data, sample)
    return m.chunk(np.array([float(beta)]))[0][0]


def build_instruments(
    g: PayoffGraph, data: NodeData, beta: float, spec: InstrumentSpec | None = None, sample: SampleSelection | None = None
) -> np.ndarray:
    """Raw instrument rows for the observed nodes (before whitening)."""
    m = SimpleModel(g, data.with_outcome(np.zeros(data.n)) if data.y is None else data, sample, spec)
    return m.chunk(np.array([float(beta)]))[1][0]


def _first_step(Z, pt, y):
    n = Z.shape[-2]
    SZ = np.swapaxes(Z, -1, -2) @ pt / n
    Sy = (np.swapaxes(pt, -1, -2) @ y[..., None])[..., 0] / n
    H = SZ @ np.swapaxes(SZ, -1, -2)
    rho = _solve_stack(H, (SZ @ Sy[..., None])[..., 0])
    v = y - (Z @ rho[..., None])[..., 0]
    return rho, v, SZ, Sy, H


def first_step_rho(Z, phi_tilde, y):
    """Identity-weighted GMM: rho = (S_Zphi S_Zphi')^-1 S_Zphi S_phiy and residuals."""
    Z, pt, y = (np.asarray(a, dtype=float) for a in (Z, phi_tilde, y))
    n = Z.shape[-2]
    SZ = Z.T @ pt / n
    H = SZ @ SZ.T
    if np.linalg.matrix_rank(H) < H.shape[0]:
        raise RankDeficientDesign("S_Zphi S_Zphi' is singular")
    rho, v, *_ = _first_step(Z, pt, y)
    return rho, v


def _lambda_hat(pt, v, q, adj_pairs, plan: KernelPlan, nonoverlap: bool):
    """Stacked network covariance estimate; returns (Lambda, s_eps, zero_den)."""
    n = pt.shape[-2]
    L1 = np.swapaxes(pt * (v * v)[:, :, None], -1, -2) @ pt / n
    B = pt.shape[0]
    if nonoverlap or plan.n_pairs == 0:
        return L1, np.zeros(B), np.zeros(B, dtype=bool)
    pi, pj = plan.pi, plan.pj
    ia, ja = pi[adj_pairs], pj[adj_pairs]
    num = np.einsum("bp,bp->b", v[:, ia], v[:, ja])
    den = q[:, adj_pairs].sum(axis=1)
    zero = np.abs(den) < 1e-300
    s = np.where(zero, 0.0, num / np.where(zero, 1.0, den))
    Qphi = plan.pair_pattern.apply(q, pt)
    L2 = np.swapaxes(pt, -1, -2) @ Qphi / n
    L2 = _sym(L2) * s[:, None, None]
    return L1 + L2, s, zero


def q_eps(g: PayoffGraph, beta: float, i: int, j: int) -> float:
    """Pairwise covariance kernel of the simple model, straight from its definition."""
    if i == j:
        raise InvalidParameter("q is defined for distinct nodes")
    amp = amplification(g, beta)
    deg = g.degrees

    def lam_pair(a, b):
        nb = g.neighbors(a)
        k = np.searchsorted(nb, b)
        return amp.lam_edge[g.indptr[a] + k]

    li, lj = amp.lam_diag[i], amp.lam_diag[j]
    out = 0.0
    if g.has_edge(i, j):
        out += lam_pair(j, i) * li * lj / deg[j]
        out += lam_pair(i, j) * li * lj / deg[i]
    common = np.intersect1d(g.neighbors(i), g.neighbors(j), assume_unique=True)
    if common.size:
        s = sum(lam_pair(i, k) * lam_pair(j, k) for k in common)
        out += beta * li * lj / (deg[i] * deg[j]) * s
    return float(out)


def estimate_lambda_hat(model: SimpleModel, beta: float, v_tilde: np.ndarray, phi_tilde: np.ndarray):
    """Lambda-hat and s_eps-hat at one beta for a model's sample."""
    betas = np.array([float(beta)])
    _, _, D0, Kv = model.chunk(betas)
    q = model.plan.q(D0, Kv, betas)
    L, s, zero = _lambda_hat(phi_tilde[None], np.asarray(v_tilde)[None], q, model.adj_pairs, model.plan, model.sample.nonoverlapping)
    if zero[0]:
        warnings.warn("s_eps denominator is zero; pair covariance term dropped", RuntimeWarning, stacklevel=2)
    return L[0], float(s[0])


def gmm_rho(Z, phi_tilde, y, Lambda_hat, c: float = PD_FLOOR):
    """Efficient GMM step given Lambda-hat; returns (rho_hat, V_hat, v_hat)."""
    Z, pt, y = (np.asarray(a, dtype=float) for a in (Z, phi_tilde, y))
    Lr = pd_repair(Lambda_hat, c)
    n = Z.shape[0]
    SZ = Z.T @ pt / n
    Sy = pt.T @ y / n
    Li = np.linalg.inv(Lr)
    H = SZ @ Li @ SZ.T
    if np.linalg.matrix_rank(H) < H.shape[0]:
        raise RankDeficientDesign("weighted design is singular")
    Vraw = np.linalg.inv(H)
    rho = Vraw @ SZ @ Li @ Sy
    return rho, pd_repair(Vraw, c), y - Z @ rho


# ---------------------------------------------------------------------------
# grid evaluation


@dataclass
class GridResult:
    """Per-beta output of the profiled pipeline on a grid.

    ``T`` is +inf where the pipeline failed and NaN where a point was
    skipped by coarse screening (treated as rejected).
    """

    betas: np.ndarray
    T: np.ndarray
    rho: np.ndarray
    V: np.ndarray
    s_eps: np.ndarray
    lam: np.ndarray
    n_obs: int
    M: int
    d: int
    model: str = "simple"
    failed: np.ndarray | None = None

    @property
    def dof(self) -> int:
        return self.M - self.d

    def accepted(self, level: float) -> np.ndarray:
        crit = chi2_quantile(level, self.dof)
        with np.errstate(invalid="ignore"):
            return np.nan_to_num(self.T, nan=np.inf) <= crit

    def T_min(self) -> float:
        t = np.nan_to_num(self.T, nan=np.inf)
        return float(t.min()) if t.size else np.inf


def make_grid(step: float = 0.002) -> np.ndarray:
    """Symmetric grid k * step strictly inside (-1, 1)."""
    if not 0 < step < 1:
        raise InvalidParameter("grid step must lie in (0, 1)")
    K = int(round(1.0 / step))
    k = np.arange(-(K - 1), K)
    g = k * step
    return np.round(g[np.abs(g) < 1], 12)


def _run_chunk(model, betas: np.ndarray):
    B = betas.size
    d, M = model.d, model.M
    out_T = np.full(B, np.inf)
    out_rho = np.full((B, d), np.nan)
    out_V = np.full((B, d, d), np.nan)
    out_s = np.full(B, np.nan)
    out_L = np.full((B, M, M), np.nan)
    Z, phi, D0, Kv = model.chunk(betas)
    pt, ok, _ = _whiten(phi)
    y = np.broadcast_to(model.y, (B, model.y.size))
    with np.errstate(all="ignore"):
        rho1, v1, SZ, Sy, H1 = _first_step(Z, pt, y)
        ok &= np.linalg.cond(H1) < 1e12
        q = model.plan.q(D0, Kv, betas)
        Lam, s, zero = _lambda_hat(pt, v1, q, model.adj_pairs, model.plan, model.sample.nonoverlapping)
        if zero.any() and not model.sample.nonoverlapping:
            warnings.warn("s_eps denominator is zero at some beta; pair covariance term dropped", RuntimeWarning, stacklevel=3)
        w, Vec = np.linalg.eigh(_sym(Lam))
        w = np.maximum(w, PD_FLOOR)
        Linv = (Vec * (1.0 / w)[:, None, :]) @ np.swapaxes(Vec, -1, -2)
        Lrep = (Vec * w[:, None, :]) @ np.swapaxes(Vec, -1, -2)
        H = SZ @ Linv @ np.swapaxes(SZ, -1, -2)
        ok &= np.linalg.cond(H) < 1e12
        H = np.where(ok[:, None, None], H, np.eye(d))
        rhs = (SZ @ Linv @ Sy[:, :, None])[:, :, 0]
        rho = _solve_stack(H, rhs)
        Vraw = np.linalg.inv(H)
        V = pd_repair(Vraw)
        v = y - (Z @ rho[:, :, None])[:, :, 0]
        gbar = (np.swapaxes(pt, -1, -2) @ v[:, :, None]) / model.y.size
        T = model.y.size * (np.swapaxes(gbar, -1, -2) @ Linv @ gbar)[:, 0, 0]
    ok &= np.isfinite(T) & np.all(np.isfinite(rho), axis=1)
    out_T[ok] = np.maximum(T[ok], 0.0)
    out_rho[ok], out_V[ok], out_s[ok], out_L[ok] = rho[ok], V[ok], s[ok], Lrep[ok]
    return out_T, out_rho, out_V, out_s, out_L


def evaluate_grid(
    model,
    betas,
    chunk_size: int = 32,
    screen_step: float | None = None,
    screen_level: float = 0.99,
    screen_margin: float = 1.0,
) -> GridResult:
    """Run the profiled pipeline at every beta of the grid.

    With ``screen_step`` the grid is first evaluated on a coarse subgrid;
    fine points are then computed only inside coarse cells where an
    endpoint has T below ``screen_margin`` times the ``screen_level``
    critical value, and around the coarse minimum.  Skipped points get
    T = NaN and count as rejected.
    """
    betas = np.asarray(betas, dtype=float)
    G = betas.size
    d, M = model.d, model.M
    T = np.full(G, np.nan)
    rho = np.full((G, d), np.nan)
    V = np.full((G, d, d), np.nan)
    s = np.full(G, np.nan)
    lam = np.full((G, M, M), np.nan)

    def run(idx):
        for c0 in range(0, idx.size, chunk_size):
            sel = idx[c0 : c0 + chunk_size]
            res = _run_chunk(model, betas[sel])
            T[sel], rho[sel], V[sel], s[sel], lam[sel] = res

    if screen_step is None or G < 3:
        run(np.arange(G))
    else:
        fine = float(np.median(np.diff(betas))) if G > 1 else 1.0
        stride = max(1, int(round(screen_step / fine)))
        coarse = np.arange(0, G, stride)
        if coarse[-1] != G - 1:
            coarse = np.append(coarse, G - 1)
        run(coarse)
        thr = screen_margin * chi2_quantile(screen_level, M - d)
        Tc = T[coarse]
        need = np.zeros(G, dtype=bool)
        low = Tc <= thr
        for a in range(coarse.size - 1):
            if low[a] or low[a + 1]:
                need[coarse[a] : coarse[a + 1] + 1] = True
        if np.isfinite(Tc).any():
            k = int(np.nanargmin(np.where(np.isfinite(Tc), Tc, np.nan)))
            need[coarse[max(k - 1, 0)] : coarse[min(k + 1, coarse.size - 1)] + 1] = True
        need[coarse] = False
        run(np.flatnonzero(need))
    failed = np.isinf(T)
    return GridResult(betas, T, rho, V, s, lam, model.y.size, M, d, model.name, failed)


def test_statistic(beta: float, g: PayoffGraph, data: NodeData, sample=None, spec=None, model: str = "simple") -> float:
    """T(beta) for one candidate beta (+inf if the pipeline fails there)."""
    m = make_model(g, data, sample, spec, model)
    return float(_run_chunk(m, np.array([float(beta)]))[0][0])


def make_model(g, data, sample=None, spec=None, model: str = "simple"):
    if model == "simple":
        return SimpleModel(g, data, sample, spec)
    if model == "fs":
        from .inference_fs import FsModel

        return FsModel(g, data, sample, spec)
    raise InvalidParameter(f"unknown inference model {model!r}")


# ---------------------------------------------------------------------------
# confidence sets


def _runs(betas: np.ndarray, accepted: np.ndarray) -> list[tuple[float, float]]:
    out = []
    idx = np.flatnonzero(accepted)
    if idx.size == 0:
        return out
    breaks = np.flatnonzero(np.diff(idx) > 1)
    starts = np.concatenate([[idx[0]], idx[breaks + 1]])
    stops = np.concatenate([idx[breaks], [idx[-1]]])
    return [(float(betas[a]), float(betas[b])) for a, b in zip(starts, stops)]


def set_length(intervals) -> float:
    return float(sum(hi - lo for lo, hi in intervals))


def confidence_set_beta(grid: GridResult, alpha: float = 0.05) -> list[tuple[float, float]]:
    """Maximal runs of grid points with T(beta) at or below the 1-alpha chi-square quantile."""
    if not 0 < alpha < 1:
        raise InvalidParameter("alpha must lie in (0, 1)")
    return _runs(grid.betas, grid.accepted(1.0 - alpha))


def _a_rho_bounds(grid: GridResult, a, alpha: float, mask: np.ndarray):
    a = np.asarray(a, dtype=float)
    z = normal_quantile(1.0 - alpha / 4.0)
    est = grid.rho[mask] @ a
    se = np.sqrt(np.maximum(np.einsum("i,bij,j->b", a, grid.V[mask], a), 0.0)) / np.sqrt(grid.n_obs)
    return est - z * se, est + z * se


def confidence_interval_a_rho(grid: GridResult, a, alpha: float = 0.05) -> tuple[float, float]:
    """Hull of per-beta normal intervals for a'rho over the 1 - alpha/2 beta set."""
    mask = grid.accepted(1.0 - alpha / 2.0)
    if not mask.any():
        raise EmptyConfidenceSet("beta confidence set at level 1 - alpha/2 is empty")
    lo, hi = _a_rho_bounds(grid, a, alpha, mask)
    return float(lo.min()), float(hi.max())


def confidence_set_ane(g: PayoffGraph, betas, gamma_interval, sample=None) -> tuple[float, float]:
    """Hull of the covariate ANE over accepted betas and the gamma_r interval endpoints."""
    betas = np.atleast_1d(np.asarray(betas, dtype=float))
    if betas.size == 0:
        raise EmptyConfidenceSet("no accepted beta")
    lo_g, hi_g = gamma_interval
    # linear in gamma_r, so the unit value is computed once per beta
    unit = np.array([ane_x1(g, b, 1.0, sample) for b in betas])
    vals = np.concatenate([unit * lo_g, unit * hi_g])
    return float(vals.min()), float(vals.max())


def ane_interval(grid: GridResult, g: PayoffGraph, r: int, alpha: float = 0.05, sample=None) -> tuple[float, float]:
    """ANE set from the 1-alpha/2 beta set and the 1-alpha/2 interval of gamma_r."""
    mask = grid.accepted(1.0 - alpha / 2.0)
    if not mask.any():
        raise EmptyConfidenceSet("beta confidence set at level 1 - alpha/2 is empty")
    e = np.zeros(grid.d)
    e[r] = 1.0
    gam = confidence_interval_a_rho(grid, e, alpha / 2.0)
    return confidence_set_ane(g, grid.betas[mask], gam, sample)


# ---------------------------------------------------------------------------
# one-call estimation


@dataclass
class InferenceOutput:
    rho_hat: np.ndarray
    V_hat: np.ndarray
    beta_hat: float
    T_grid: GridResult
    ci_beta: list
    ci_a_rho: tuple | None
    ci_ane: tuple | None
    lambda_hat: np.ndarray
    s_eps_hat: float
    alpha: float

    def to_dict(self, grid_step: float | None = None) -> dict:
        t = self.T_grid
        curve = [[float(b), (None if not np.isfinite(x) else float(x))] for b, x in zip(t.betas, t.T) if not np.isnan(x)]
        return {
            "model": t.model,
            "beta_ci": [[lo, hi] for lo, hi in self.ci_beta],
            "beta_hat": self.beta_hat,
            "rho_hat": self.rho_hat.tolist(),
            "V_hat": self.V_hat.tolist(),
            "a_rho_ci": None if self.ci_a_rho is None else list(self.ci_a_rho),
            "ane_ci": None if self.ci_ane is None else list(self.ci_ane),
            "T_curve": curve,
            "s_eps_hat": self.s_eps_hat,
            "M": t.M,
            "d": t.d,
            "n_obs": t.n_obs,
            "alpha": self.alpha,
            "grid_step": grid_step,
        }


def estimate(
    g: PayoffGraph,
    data: NodeData,
    sample: SampleSelection | None = None,
    spec: InstrumentSpec | None = None,
    model: str = "simple",
    alpha: float = 0.05,
    grid_step: float = 0.002,
    a=None,
    ane_index: int | None = 1,
    screen_step: float | None = None,
) -> InferenceOutput:
    """Full pipeline: beta confidence set, a'rho interval and covariate ANE set.

    Point estimates are reported at the grid minimizer of T.
    """
    m = make_model(g, data, sample, spec, model)
    betas = make_grid(grid_step)
    grid = evaluate_grid(m, betas, screen_step=screen_step, screen_level=1.0 - alpha / 4.0)
    ci = confidence_set_beta(grid, alpha)
    t = np.nan_to_num(grid.T, nan=np.inf)
    if not np.isfinite(t).any():
        raise RankDeficientDesign("pipeline failed at every grid point")
    k = int(np.argmin(t))
    a = np.ones(m.d) if a is None else np.asarray(a, dtype=float)
    try:
        ci_rho = confidence_interval_a_rho(grid, a, alpha)
    except EmptyConfidenceSet:
        ci_rho = None
    ci_ane = None
    if ane_index is not None and data.d_x1 > ane_index:
        try:
            ci_ane = ane_interval(grid, g, ane_index, alpha, m.sample)
        except EmptyConfidenceSet:
            ci_ane = None
    return InferenceOutput(grid.rho[k], grid.V[k], float(grid.betas[k]), grid, ci, ci_rho, ci_ane, grid.lam[k], float(grid.s_eps[k]), alpha)
