"""Sample selection, choice between simple and sophisticated agents, and the
test for information sharing on unobservables.

Everything that picks nodes takes only the graph (and availability flags),
never outcomes or shocks.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dgp import NodeData
from .errors import ConditionViolation, InvalidParameter
from .graphs import PayoffGraph
from .inference import (
    GridResult,
    InstrumentSpec,
    SampleSelection,
    chi2_quantile,
    evaluate_grid,
    make_grid,
    make_model,
)

__all__ = [
    "ModelSelectionResult",
    "IuTestResult",
    "select_sample_nonoverlapping",
    "default_tilde_neighbors",
    "model_select",
    "iu_statistic",
    "iu_test",
]


def select_sample_nonoverlapping(g: PayoffGraph, order=None) -> SampleSelection:
    """Greedy sample in which no two chosen nodes are adjacent or share a neighbor.

    ``order`` is a node permutation, a generator (used to draw one) or None
    for increasing ids.  Node i joins when its closed neighborhood misses
    the neighborhoods claimed so far and i itself was not claimed.
    """
    if order is None:
        order = np.arange(g.n)
    elif isinstance(order, np.random.Generator):
        order = order.permutation(g.n)
    else:
        order = np.asarray(order, dtype=np.int64)
        if order.size != g.n or not np.array_equal(np.sort(order), np.arange(g.n)):
            raise InvalidParameter("order must be a permutation of the node ids")
    # covered[k]: k is a neighbor of a chosen node; closed[k]: k lies in a
    # chosen node's closed neighborhood
    covered = np.zeros(g.n, dtype=bool)
    closed = np.zeros(g.n, dtype=bool)
    chosen = []
    for i in order:
        nb = g.neighbors(i)
        if closed[i] or covered[nb].any():
            continue
        chosen.append(int(i))
        covered[nb] = True
        closed[nb] = True
        closed[i] = True
    return SampleSelection(g.n, np.array(chosen, dtype=np.int64), nonoverlapping=True)


# ---------------------------------------------------------------------------
# model selection


@dataclass
class ModelSelectionResult:
    t_st: float
    t_fs: float
    critical: float
    selected: list
    alpha: float = 0.05
    grids: dict = field(default_factory=dict, repr=False)

    def to_dict(self) -> dict:
        fin = lambda x: float(x) if np.isfinite(x) else None
        return {"t_st": fin(self.t_st), "t_fs": fin(self.t_fs), "critical": self.critical, "selected": list(self.selected), "alpha": self.alpha}


def model_select(
    g: PayoffGraph,
    data: NodeData,
    sample: SampleSelection | None = None,
    spec: InstrumentSpec | None = None,
    alpha: float = 0.05,
    betas=None,
    screen_step: float | None = 0.01,
) -> ModelSelectionResult:
    """Keep each agent model whose profiled statistic stays below the 1 - alpha/2 quantile.

    Only the infimum over the grid matters, so a screened grid (coarse pass
    plus refinement near the minimum) is used by default.
    """
    if not 0 < alpha < 1:
        raise InvalidParameter("alpha must lie in (0, 1)")
    betas = make_grid() if betas is None else np.asarray(betas, dtype=float)
    level = 1.0 - alpha / 2.0
    out, grids, crit = {}, {}, None
    for name in ("simple", "fs"):
        m = make_model(g, data, sample, spec, name)
        grid = evaluate_grid(m, betas, screen_step=screen_step, screen_level=level)
        grids[name] = grid
        out[name] = grid.T_min()
        crit = chi2_quantile(level, grid.dof)
    selected = [lab for lab, name in (("ST", "simple"), ("FS", "fs")) if out[name] <= crit]
    return ModelSelectionResult(out["simple"], out["fs"], crit, selected, alpha, grids)


# ---------------------------------------------------------------------------
# information sharing on unobservables


@dataclass
class IuTestResult:
    statistic: float
    critical: float
    reject: bool
    tilde_d_av: float
    inconclusive: bool = False
    beta_at_inf: float | None = None
    n_used: int = 0
    model: str = "simple"

    def to_dict(self) -> dict:
        return {
            "statistic": self.statistic,
            "critical": self.critical,
            "reject": self.reject,
            "inconclusive": self.inconclusive,
            "tilde_d_av": self.tilde_d_av,
            "beta_at_inf": self.beta_at_inf,
            "n_used": self.n_used,
            "model": self.model,
        }


def _usable_partners(g: PayoffGraph, sample: SampleSelection, hops: int) -> np.ndarray:
    """Nodes whose residual can be formed: known, with known neighbors up to ``hops``."""
    known = sample.known_mask()
    ok = known.copy()
    A = g.adjacency_matrix
    reach_bad = (~known).astype(float)
    for _ in range(hops):
        reach_bad = reach_bad + A @ reach_bad
        ok &= reach_bad == 0
    return ok


def default_tilde_neighbors(g: PayoffGraph, sample: SampleSelection, hops: int = 1) -> np.ndarray:
    """Lowest-id usable neighbor of each observed node, -1 where there is none."""
    ok = _usable_partners(g, sample, hops)
    out = np.full(sample.n_obs, -1, dtype=np.int64)
    for t, i in enumerate(sample.observed):
        nb = g.neighbors(int(i))
        nb = nb[ok[nb]]
        if nb.size:
            out[t] = nb[0]
    return out


def iu_statistic(v_i: np.ndarray, v_j: np.ndarray, tilde_d_av: float = 1.0) -> float:
    """(sum_i v_i v_j(i))^2 / (2 S^4 n) with S^2 = tilde_d_av^(1/2) mean(v_i^2)."""
    v_i = np.asarray(v_i, dtype=float)
    n = v_i.size
    s2 = np.sqrt(tilde_d_av) * np.mean(v_i**2)
    if s2 == 0.0:
        return 0.0
    return float(np.sum(v_i * v_j) ** 2 / (2.0 * s2**2 * n))


def iu_test(
    g: PayoffGraph,
    data: NodeData,
    sample: SampleSelection | None = None,
    spec: InstrumentSpec | None = None,
    alpha: float = 0.05,
    model: str = "simple",
    betas=None,
    screen_step: float | None = 0.01,
    grid: GridResult | None = None,
) -> IuTestResult:
    """Test for cross-neighbor residual correlation over the 1 - alpha/2 beta set.

    Each observed node i is paired with one neighbor taken from
    ``sample.tilde_neighbor`` (default: lowest-id usable neighbor).  Nodes
    without a partner drop out of the statistic.  An empty beta set makes
    the result inconclusive (statistic 0, no rejection).
    """
    if not 0 < alpha < 1:
        raise InvalidParameter("alpha must lie in (0, 1)")
    sample = sample or SampleSelection.full(g)
    hops = 2 if model == "fs" else 1
    est = make_model(g, data, sample, spec, model)
    if grid is None:
        betas = make_grid() if betas is None else np.asarray(betas, dtype=float)
        grid = evaluate_grid(est, betas, screen_step=screen_step, screen_level=1.0 - alpha / 4.0)
    crit = chi2_quantile(1.0 - alpha / 2.0, 1)

    partner = sample.tilde_neighbor if sample.tilde_neighbor is not None else default_tilde_neighbors(g, sample, hops)
    partner = np.asarray(partner, dtype=np.int64)
    if partner.size != sample.n_obs:
        raise InvalidParameter("tilde_neighbor needs one entry per observed node")
    usable = _usable_partners(g, sample, hops)
    keep = partner >= 0
    src = sample.observed[keep]
    dst = partner[keep]
    for i, j in zip(src, dst):
        if not g.has_edge(int(i), int(j)):
            raise ConditionViolation("D1" if model == "fs" else "D", f"partner {int(j)} is not a neighbor of {int(i)}")
        if not usable[j]:
            raise ConditionViolation("D1" if model == "fs" else "D", f"partner {int(j)} of node {int(i)} lacks neighbor data")
    if src.size == 0:
        raise ConditionViolation("D1" if model == "fs" else "D", "no observed node has a usable neighbor")
    d_av = 1.0  # one partner per node

    accepted = grid.accepted(1.0 - alpha / 2.0)
    if not accepted.any():
        return IuTestResult(0.0, crit, False, d_av, inconclusive=True, n_used=int(src.size), model=model)

    nodes = np.union1d(src, dst)
    aux = make_model(g, data, SampleSelection(g.n, nodes, known=sample.known), spec, model)
    pos_i = np.searchsorted(nodes, src)
    pos_j = np.searchsorted(nodes, dst)
    idx = np.flatnonzero(accepted)
    best, best_beta = np.inf, None
    for c0 in range(0, idx.size, 32):
        sel = idx[c0 : c0 + 32]
        Z = aux.chunk(grid.betas[sel])[0]
        v = aux.y[None, :] - np.einsum("bnk,bk->bn", Z, grid.rho[sel])
        for t in range(sel.size):
            stat = iu_statistic(v[t, pos_i], v[t, pos_j], d_av)
            if stat < best:
                best, best_beta = stat, float(grid.betas[sel[t]])
    return IuTestResult(best, crit, bool(best > crit), d_av, False, best_beta, int(src.size), model)
