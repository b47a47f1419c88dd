"""Best responses of boundedly rational agents, the equilibrium, and ANE.

All responses are linear in the sharable shock u = X1 gamma + eps and in
X2 delta.  With D = diag(lambda_ii) and L the sparse matrix carrying
lambda_ij / n_i on edges, the simple type plays

    Y = D (I + beta L) u + L X2 delta + eta

and each further order of sophistication applies W -> I + beta Abar W,
where Abar is the row-normalized adjacency.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .dgp import ModelParams, NodeData
from .errors import InvalidParameter, SolverFailure
from .graphs import PayoffGraph

__all__ = [
    "Amplification",
    "amplification",
    "StrategyWeights",
    "best_response_simple",
    "best_response_fs",
    "build_weights",
    "best_response_m",
    "equilibrium_outcomes",
    "equilibrium_residual",
    "ane_epsilon",
    "ane_profile",
    "ane_x1",
    "reflection_effect",
]


def _check_beta(beta: float) -> float:
    beta = float(beta)
    if not abs(beta) < 1:
        raise InvalidParameter(f"|beta| must be below 1, got {beta}")
    return beta


@dataclass(frozen=True, eq=False)
class Amplification:
    """Interaction weights of a graph at one value of beta.

    ``lam_diag[i]`` is lambda_ii, ``lam_edge[e]`` is lambda_ij on directed
    edge ``e`` and ``L`` holds lambda_ij / n_i.  Isolated nodes get
    lambda_ii = 1 and empty rows.
    """

    beta: float
    lam_diag: np.ndarray
    lam_edge: np.ndarray
    L: sp.csr_matrix

    @property
    def D(self) -> sp.dia_matrix:
        return sp.diags(self.lam_diag)


def amplification(g: PayoffGraph, beta: float) -> Amplification:
    beta = _check_beta(beta)
    cc = g.centrality
    lam_diag = 1.0 / (1.0 - beta * cc.c_diag)
    lam_edge = 1.0 / (1.0 - beta * cc.c_edge)
    L = sp.csr_matrix(
        (lam_edge / g.degrees[g.edge_src], g.indices, g.indptr), shape=(g.n, g.n)
    )
    return Amplification(beta, lam_diag, lam_edge, L)


def _inputs(g: PayoffGraph, data: NodeData, params: ModelParams):
    if data.n != g.n:
        raise InvalidParameter("data and graph sizes differ")
    eps = data.eps if data.eps is not None else np.zeros(g.n)
    eta = data.eta if data.eta is not None else np.zeros(g.n)
    u = data.X1 @ params.gamma + eps
    x2d = data.X2 @ params.delta if data.d_x2 else np.zeros(g.n)
    return u, x2d, eta


def best_response_simple(g: PayoffGraph, data: NodeData, params: ModelParams) -> np.ndarray:
    amp = amplification(g, params.beta)
    u, x2d, eta = _inputs(g, data, params)
    return amp.lam_diag * (u + params.beta * (amp.L @ u)) + amp.L @ x2d + eta


def best_response_fs(g: PayoffGraph, data: NodeData, params: ModelParams) -> np.ndarray:
    """Response of an agent who believes everyone else is a simple type."""
    b = params.beta
    amp = amplification(g, b)
    A = g.row_normalized
    u, x2d, eta = _inputs(g, data, params)
    Du = amp.lam_diag * u
    # lambda-tilde = Abar D L and lambda-bar = Abar L
    own = u + b * (A @ Du) + b * b * (A @ (amp.lam_diag * (amp.L @ u)))
    return own + A @ x2d + b * (A @ (amp.L @ x2d)) + eta


@dataclass(frozen=True, eq=False)
class StrategyWeights:
    """Order-m weights on (eps, X1, X2) for every node.

    Row ``i`` of ``W_eps`` maps node ``j`` to the weight of eps_j in Y_i;
    the X1 weight vector is that scalar times gamma and the X2 weight
    vector is ``U[i, j]`` times delta.
    """

    order: int
    W_eps: sp.csr_matrix
    U: sp.csr_matrix
    gamma: np.ndarray
    delta: np.ndarray

    def eps_weights(self, i: int) -> dict[int, float]:
        row = self.W_eps.getrow(i)
        return {int(j): float(w) for j, w in zip(row.indices, row.data)}

    def x1_weights(self, i: int) -> dict[int, np.ndarray]:
        return {j: w * self.gamma for j, w in self.eps_weights(i).items()}

    def x2_weights(self, i: int) -> dict[int, np.ndarray]:
        row = self.U.getrow(i)
        return {int(j): float(w) * self.delta for j, w in zip(row.indices, row.data)}

    def apply(self, data: NodeData) -> np.ndarray:
        eps = data.eps if data.eps is not None else np.zeros(data.n)
        eta = data.eta if data.eta is not None else np.zeros(data.n)
        out = self.W_eps @ (data.X1 @ self.gamma + eps) + eta
        if data.d_x2:
            out = out + self.U @ (data.X2 @ self.delta)
        return out

    def to_rows(self):
        """Yield ``(i, j, w_eps, w_x1..., w_x2...)`` tuples for debugging dumps."""
        W = self.W_eps.tocoo()
        U = self.U.tocsr()
        keys = set(zip(W.row.tolist(), W.col.tolist()))
        Uc = U.tocoo()
        keys |= set(zip(Uc.row.tolist(), Uc.col.tolist()))
        Wc = self.W_eps.tocsr()
        for i, j in sorted(keys):
            w, v = Wc[i, j], U[i, j]
            yield (i, j, w, *(w * self.gamma), *(v * self.delta))


def build_weights(g: PayoffGraph, params: ModelParams, m: int) -> StrategyWeights:
    """Sparse weight matrices of the order-m best response.

    Starts from the simple-type coefficients and applies
    W <- I + beta Abar W and U <- Abar + beta Abar U, m times.
    """
    if m < 0:
        raise InvalidParameter("order must be non-negative")
    b = params.beta
    amp = amplification(g, b)
    A = g.row_normalized
    eye = sp.identity(g.n, format="csr")
    W = (amp.D @ (eye + b * amp.L)).tocsr()
    U = amp.L.copy()
    for _ in range(m):
        W = (eye + b * (A @ W)).tocsr()
        U = (A + b * (A @ U)).tocsr()
    W.eliminate_zeros()
    U.eliminate_zeros()
    return StrategyWeights(m, W, U, params.gamma, params.delta)


def best_response_m(g: PayoffGraph, data: NodeData, params: ModelParams, m: int) -> np.ndarray:
    """Order-m response, computed by the same recursion on vectors."""
    if m < 0:
        raise InvalidParameter("order must be non-negative")
    b = params.beta
    amp = amplification(g, b)
    A = g.row_normalized
    u, x2d, eta = _inputs(g, data, params)
    w = amp.lam_diag * (u + b * (amp.L @ u))
    z = amp.L @ x2d
    ax2 = A @ x2d
    for _ in range(m):
        w = u + b * (A @ w)
        z = ax2 + b * (A @ z)
    return w + z + eta


def equilibrium_outcomes(g: PayoffGraph, data: NodeData, params: ModelParams) -> np.ndarray:
    """Complete-information equilibrium, solving (I - beta Abar) Y = X1 g + Abar X2 d + eps.

    Private shocks play no role in this game, so ``data.eta`` is ignored.
    """
    b = _check_beta(params.beta)
    A = g.row_normalized
    eps = data.eps if data.eps is not None else np.zeros(g.n)
    rhs = data.X1 @ params.gamma + eps
    if data.d_x2:
        rhs = rhs + A @ (data.X2 @ params.delta)
    if b == 0.0:
        return rhs
    M = (sp.identity(g.n, format="csc") - b * A).tocsc()
    try:
        y = spla.splu(M).solve(rhs)
    except RuntimeError as exc:
        raise SolverFailure(f"sparse LU failed: {exc}") from exc
    res = np.max(np.abs(M @ y - rhs), initial=0.0)
    if not np.isfinite(res) or res > 1e-10 * max(1.0, np.max(np.abs(rhs), initial=0.0)):
        raise SolverFailure(f"equilibrium residual {res:.3e} too large")
    return y


def equilibrium_residual(g: PayoffGraph, data: NodeData, params: ModelParams, y: np.ndarray) -> float:
    """Max-norm violation of Y_i = beta ybar_i + gamma'X_i1 + delta'Xbar_i2 + eps_i."""
    A = g.row_normalized
    eps = data.eps if data.eps is not None else np.zeros(g.n)
    fit = params.beta * (A @ y) + data.X1 @ params.gamma + eps
    if data.d_x2:
        fit = fit + A @ (data.X2 @ params.delta)
    return float(np.max(np.abs(y - fit), initial=0.0))


# ---------------------------------------------------------------------------
# average network externality


def reflection_effect(g: PayoffGraph, beta: float, i: int) -> float:
    beta = _check_beta(beta)
    return float(1.0 / (1.0 - beta * g.centrality.c_diag[i]) - 1.0)


def ane_x1(g: PayoffGraph, beta: float, gamma_r: float, sample=None) -> float:
    """Average externality of a covariate with coefficient ``gamma_r``.

    Averages over the observed nodes of ``sample`` (all nodes by default);
    isolated nodes add nothing but count in the denominator.
    """
    beta = _check_beta(beta)
    cc = g.centrality
    per_edge = 1.0 / (g.degrees[g.edge_src] * (1.0 - beta * cc.c_diag[g.edge_src]) * (1.0 - beta * cc.c_edge))
    per_node = np.bincount(g.edge_src, weights=per_edge, minlength=g.n)
    obs = np.arange(g.n) if sample is None else np.asarray(sample.observed)
    if obs.size == 0:
        return 0.0
    return float(beta * gamma_r * per_node[obs].sum() / obs.size)


def _model_order(model: str, m: int | None) -> int | None:
    model = model.lower()
    if model == "simple":
        return 0
    if model == "fs":
        return 1
    if model == "equilibrium":
        return None
    if model.startswith("order"):
        if m is None:
            m = int(model.split("-", 1)[1])
        return int(m)
    raise InvalidParameter(f"unknown model {model!r}")


def ane_epsilon(g: PayoffGraph, beta: float, model: str = "equilibrium", m: int | None = None) -> float:
    """Average over j of the summed effect of eps_j on everyone else's outcome."""
    beta = _check_beta(beta)
    order = _model_order(model, m)
    orders = () if order is None else (order,)
    prof = ane_profile(g, [beta], orders=orders, equilibrium=order is None)
    return float(prof["eq" if order is None else order][0])


def _normalized_operator(g: PayoffGraph):
    """Symmetric D^-1/2 A D^-1/2 restricted to non-isolated nodes."""
    keep = np.flatnonzero(g.degrees > 0)
    A = g.adjacency_matrix[keep][:, keep].tocsr()
    s = 1.0 / np.sqrt(g.degrees[keep].astype(float))
    S = sp.diags(s) @ A @ sp.diags(s)
    return S.tocsr(), keep, s


def chebyshev_terms(beta: float, tol: float) -> int:
    """Number of Chebyshev terms so that the trace tail is below ``tol`` per node."""
    if beta == 0.0:
        return 0
    q = np.sqrt(1.0 - beta * beta)
    r = abs((1.0 - q) / beta)
    if r < tol:
        return 1
    # tail bound 2 r^{K+1} / ((1 - r) q)
    K = np.log(tol * (1.0 - r) * q / 2.0) / np.log(r) - 1.0
    return max(1, int(np.ceil(K)))


def _spectral_pass(S: sp.csr_matrix, powers: tuple[int, ...], n_cheb: int, edge_rows, edge_cols, block: int | None):
    """Exact moments of S gathered column block by column block.

    Runs the Chebyshev recurrence T_{j+1} = 2 S T_j - T_{j-1} on blocks of
    identity columns.  Returns tr S^k for k <= max(powers), the diagonal
    and the entries at ``(edge_rows, edge_cols)`` of S^k for k in
    ``powers``, and tr T_k(S) for k <= n_cheb.
    """
    n = S.shape[0]
    kmax = max(powers, default=0)
    # monomials as Chebyshev combinations: x^k = sum_j conv[k][j] T_j
    conv = [np.polynomial.chebyshev.poly2cheb([0.0] * k + [1.0]) for k in range(kmax + 1)]
    half = n_cheb // 2 + 1
    steps = max(kmax, half + 1)
    diag_T = np.zeros((kmax + 1, n))
    ent_T = np.zeros((kmax + 1, edge_rows.size))
    F = np.zeros(steps + 1)  # sum of T_j * T_j
    G = np.zeros(steps + 1)  # sum of T_{j+1} * T_j
    if block is None:
        block = 128
    order = np.argsort(edge_cols, kind="stable")
    ecols = edge_cols[order]
    for c0 in range(0, n, block):
        c1 = min(n, c0 + block)
        cols = np.arange(c0, c1)
        lo, hi = np.searchsorted(ecols, [c0, c1])
        sel = order[lo:hi]
        rows_sel, cols_sel = edge_rows[sel], edge_cols[sel] - c0
        T_prev = np.zeros((n, c1 - c0))
        T_prev[cols, cols - c0] = 1.0
        T_cur = S @ T_prev
        F[0] += c1 - c0
        for j in range(steps + 1):
            Tj = T_prev  # T_j at the top of the loop
            if j <= kmax:
                diag_T[j, c0:c1] = Tj[cols, cols - c0]
                ent_T[j, sel] = Tj[rows_sel, cols_sel]
            if j >= 1:
                F[j] += np.einsum("ij,ij->", Tj, Tj)
            G[j] += np.einsum("ij,ij->", T_cur, Tj)
            if j == steps:
                break
            T_next = 2.0 * (S @ T_cur) - Tj if j >= 1 else T_cur
            if j == 0:
                T_prev, T_cur = T_cur, 2.0 * (S @ T_cur) - T_prev
            else:
                T_prev, T_cur = T_cur, T_next
    diag = {k: conv[k] @ diag_T[: conv[k].size] for k in powers}
    ent = {k: conv[k] @ ent_T[: conv[k].size] for k in powers}
    tr_pow = np.array([np.dot(conv[k], diag_T[: conv[k].size].sum(axis=1)) for k in range(kmax + 1)])
    cheb = np.zeros(n_cheb + 1)
    for k in range(n_cheb + 1):
        j = k // 2
        # T_2j = 2 T_j^2 - 1 and T_{2j+1} = 2 T_j T_{j+1} - T_1, with tr T_1 = 0
        cheb[k] = 2.0 * F[j] - n if k % 2 == 0 else 2.0 * G[j]
    cheb[0] = n
    return tr_pow, diag, ent, cheb


def ane_profile(
    g: PayoffGraph,
    betas,
    orders=(0, 1, 2, 3, 5),
    equilibrium: bool = True,
    tol: float = 1e-11,
    block: int | None = None,
) -> dict:
    """ANE of several behavioral orders and of the equilibrium on a beta grid.

    Row sums of every response matrix come from vector recursions.  The
    traces need exact moments of S = D^-1/2 A D^-1/2, which similar to
    Abar: powers up to the largest order for the behavioral models, and
    Chebyshev moments for the equilibrium, where

        1 / (1 - b x) = (1 - b^2)^-1/2 [1 + 2 sum_k r^k T_k(x)],
        r = (1 - sqrt(1 - b^2)) / b,

    truncated once the tail falls below ``tol`` per node.  Returns a dict
    keyed by order (int) and ``"eq"``, each an array over ``betas``.
    """
    betas = np.atleast_1d(np.asarray(betas, dtype=float))
    for b in betas:
        _check_beta(b)
    orders = tuple(sorted(set(int(m) for m in orders)))
    n = g.n
    out: dict = {}
    S, keep, s = _normalized_operator(g)
    pos = np.full(n, -1)
    pos[keep] = np.arange(keep.size)
    # directed edges i->j in the reduced numbering
    er, ec = pos[g.edge_src], pos[g.indices]
    n_cheb = max((chebyshev_terms(b, tol) for b in betas), default=0) if equilibrium else 0
    powers = tuple(m for m in orders if m > 0)
    if keep.size:
        tr_pow, diag, ent, cheb = _spectral_pass(S, powers, n_cheb, er, ec, block)
    else:
        tr_pow, cheb = np.zeros(max(powers, default=0) + 1), np.zeros(n_cheb + 1)
        diag = {k: np.zeros(0) for k in powers}
        ent = {k: np.zeros(er.size) for k in powers}
    n_iso = n - keep.size
    # tr(Abar^k) for k >= 1 equals tr(S^k); k = 0 counts every node
    tr_abar = tr_pow.copy()
    if tr_abar.size:
        tr_abar[0] = n
    A = g.row_normalized
    ones = np.ones(n)
    sq = np.sqrt(g.degrees.astype(float))
    for m in orders:
        vals = np.zeros(betas.size)
        for t, b in enumerate(betas):
            amp = amplification(g, b)
            w = amp.lam_diag * (1.0 + b * (amp.L @ ones))
            for _ in range(m):
                w = 1.0 + b * (A @ w)
            total = w.sum()
            if m == 0:
                tr = amp.lam_diag.sum()
            else:
                trace_head = sum(b**k * tr_abar[k] for k in range(m))
                dk = np.zeros(n)
                dk[keep] = diag[m]
                # (Abar^m)_ij = sqrt(d_j / d_i) (S^m)_ij
                ek = ent[m] * sq[g.indices] / sq[g.edge_src]
                tail = np.dot(dk, amp.lam_diag)
                lam_ji = amp.lam_edge[g.edge_rev]
                tail += b * np.sum(ek * amp.lam_diag[g.indices] * lam_ji / g.degrees[g.indices])
                tr = trace_head + b**m * tail
            vals[t] = (total - tr) / n
        out[m] = vals
    if equilibrium:
        vals = np.zeros(betas.size)
        n_act = keep.size
        for t, b in enumerate(betas):
            if b == 0.0:
                continue
            q = np.sqrt(1.0 - b * b)
            r = (1.0 - q) / b
            K = chebyshev_terms(b, tol)
            coef = r ** np.arange(1, K + 1)
            tr_s = (n_act + 2.0 * np.dot(coef, cheb[1 : K + 1])) / q
            # rows of non-isolated nodes sum to 1 / (1 - b)
            vals[t] = (n_act / (1.0 - b) - tr_s) / n
        out["eq"] = vals
    return out
