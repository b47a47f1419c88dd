"""Monte Carlo drivers: coverage tables, externality curves, convergence.

Replication r of an experiment draws its graph and types from
``rng_streams(base_seed, r)``.  The same draw is shared by all cells that
use the same graph family, size and parameter, and every beta0 reuses it,
so cells differ only by the features under study.  Results are folded in
replication order, which makes reports independent of execution order.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from itertools import product
from pathlib import Path

import numpy as np

from . import strategies
from .dgp import ModelParams, NodeData, TypeSpec, assemble_dataset, rng_streams, simulate_types
from .errors import ConfigError, FailureBudgetExceeded, InvalidParameter, NetgamesError
from .graphs import PayoffGraph, extract_nested_subgraphs, gen_barabasi_albert, gen_erdos_renyi
from .inference import (
    EmptyConfidenceSet,
    confidence_interval_a_rho,
    confidence_set_beta,
    evaluate_grid,
    make_grid,
    make_model,
    set_length,
)

__all__ = [
    "ExperimentConfig",
    "CoverageReport",
    "AneComparison",
    "ConvergenceResult",
    "make_graph",
    "run_replication",
    "run_coverage_experiment",
    "run_ane_comparison",
    "run_convergence_experiment",
    "FAILURE_BUDGET",
]

FAILURE_BUDGET = 0.01
ANE_BETAS = np.round(np.arange(-9, 10) / 10.0, 10)
ANE_ORDERS = (0, 1, 2, 3, 5)


def make_graph(family: str, n: int, param: float, rng: np.random.Generator) -> PayoffGraph:
    """ER graphs take the mean degree ``param``; BA graphs take ``param`` edges per node."""
    family = family.lower()
    if family == "er":
        return gen_erdos_renyi(n, float(param), rng)
    if family == "ba":
        if float(param) != int(param):
            raise InvalidParameter("BA edges per node must be an integer")
        return gen_barabasi_albert(n, int(param), rng=rng)
    raise InvalidParameter(f"unknown graph family {family!r}")


@dataclass
class ExperimentConfig:
    """One coverage experiment: every combination of size, graph parameter and beta0."""

    family: str = "er"
    sizes: tuple = (500,)
    params: tuple = (2.0,)
    beta0: tuple = (0.0,)
    agent_model: str = "simple"
    inference_model: str = "simple"
    alpha: float = 0.05
    R: int = 500
    base_seed: int = 12345
    grid_step: float = 0.002
    screen_step: float | None = 0.01
    gamma: tuple = (2.0, 4.0, 1.0)
    delta: tuple = (3.0, 4.0)
    a: tuple | None = None
    eps_var: float = 1.0
    eta_var: float = 1.0
    threads: int = 1

    def __post_init__(self):
        self.sizes = tuple(int(x) for x in np.atleast_1d(self.sizes))
        self.params = tuple(float(x) for x in np.atleast_1d(self.params))
        self.beta0 = tuple(float(x) for x in np.atleast_1d(self.beta0))
        self.gamma = tuple(float(x) for x in self.gamma)
        self.delta = tuple(float(x) for x in self.delta)
        if self.a is not None:
            self.a = tuple(float(x) for x in self.a)
            if len(self.a) != len(self.gamma) + len(self.delta):
                raise ConfigError("length must equal the number of coefficients", "a")
        if self.R < 1:
            raise ConfigError("must be at least 1", "R")
        for b in self.beta0:
            if not -1 < b < 1:
                raise ConfigError(f"{b} is outside (-1, 1)", "beta0")
        if not 0 < self.alpha < 1:
            raise ConfigError("must lie in (0, 1)", "alpha")
        if self.family not in ("er", "ba"):
            raise ConfigError(f"unknown family {self.family!r}", "family")
        for name in ("agent_model", "inference_model"):
            if getattr(self, name) not in ("simple", "fs"):
                raise ConfigError("must be 'simple' or 'fs'", name)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown field(s) {sorted(extra)}", sorted(extra)[0])
        try:
            return cls(**d)
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None

    def to_dict(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(self).items()}

    def config_hash(self) -> str:
        d = self.to_dict()
        d.pop("threads")
        blob = json.dumps(d, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:12]

    @property
    def params_model(self) -> ModelParams:
        return ModelParams(0.0, np.array(self.gamma), np.array(self.delta))

    @property
    def a_vec(self) -> np.ndarray:
        return np.ones(len(self.gamma) + len(self.delta)) if self.a is None else np.array(self.a)

    def graph_cells(self):
        return list(product(self.sizes, self.params))


@dataclass
class CoverageReport:
    config: ExperimentConfig
    records: list
    cells: list
    runtime: float = 0.0

    def failure_seeds(self) -> dict:
        out: dict = {}
        for r in self.records:
            if r["failed"]:
                key = f"n={r['n']},param={r['param']},beta0={r['beta0']}"
                out.setdefault(key, []).append({"rep": r["rep"], "seed": self.config.base_seed, "error": r["error"]})
        return out

    def budget_exceeded(self) -> list:
        return [c for c in self.cells if c["failures"] > FAILURE_BUDGET * c["R"]]

    def cell(self, n: int, param: float, beta0: float) -> dict:
        for c in self.cells:
            if c["n"] == n and math.isclose(c["param"], param) and math.isclose(c["beta0"], beta0):
                return c
        raise KeyError((n, param, beta0))

    def write(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        h = self.config.config_hash()
        seed = self.config.base_seed
        cov_cols = ["family", "n", "param", "beta0", "model", "R", "coverage_beta", "coverage_a_rho", "failures"]
        len_cols = ["family", "n", "param", "beta0", "model", "R", "mean_length_beta", "mean_length_a_rho", "sd_length_beta", "sd_length_a_rho"]
        for name, cols in (("coverage.csv", cov_cols), ("lengths.csv", len_cols)):
            with open(out / name, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(cols + ["config_hash", "base_seed"])
                for c in self.cells:
                    w.writerow([_fmt(c[k]) for k in cols] + [h, seed])
        rep_cols = ["rep", "n", "param", "beta0", "covered_beta", "length_beta", "covered_a_rho", "length_a_rho", "failed", "error"]
        with open(out / "replications.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(rep_cols + ["config_hash", "base_seed"])
            for r in self.records:
                w.writerow([_fmt(r[k]) for k in rep_cols] + [h, seed])
        manifest = {
            "kind": "coverage",
            "config": self.config.to_dict(),
            "config_hash": h,
            "base_seed": seed,
            "failure_seeds": self.failure_seeds(),
            "failure_budget": FAILURE_BUDGET,
            "runtime_seconds": round(self.runtime, 3),
        }
        (out / "manifest.json").write_text(json.dumps(manifest, indent=2))


def _fmt(x):
    if isinstance(x, float):
        return repr(round(x, 10))
    if isinstance(x, (bool, np.bool_)):
        return int(x)
    return x if x is not None else ""


def run_replication(config: ExperimentConfig, rep: int, n: int, param: float) -> list[dict]:
    """All beta0 cells of one replication on one graph specification."""
    streams = rng_streams(config.base_seed, rep)
    g = make_graph(config.family, n, param, streams.graph)
    types = simulate_types(n, len(config.gamma), len(config.delta), TypeSpec(eps_var=config.eps_var, eta_var=config.eta_var), streams)
    grid_betas = make_grid(config.grid_step)
    a = config.a_vec
    truth = float(a @ np.concatenate([config.gamma, config.delta]))
    out = []
    model = None
    for b0 in config.beta0:
        rec = {"rep": rep, "n": n, "param": param, "beta0": b0, "failed": False, "error": ""}
        try:
            params = config.params_model.with_beta(b0)
            y = assemble_dataset(g, types, params, config.agent_model)
            if model is None:
                model = make_model(g, types.with_outcome(y), None, None, config.inference_model)
            else:
                model = model.with_outcome(y)
            grid = evaluate_grid(
                model, grid_betas, screen_step=config.screen_step, screen_level=1.0 - config.alpha / 4.0
            )
            if not np.isfinite(np.nan_to_num(grid.T, nan=np.inf)).any():
                raise NetgamesError("pipeline failed at every grid point")
            ci = confidence_set_beta(grid, config.alpha)
            tol = 1e-9
            rec["covered_beta"] = any(lo - tol <= b0 <= hi + tol for lo, hi in ci)
            rec["length_beta"] = set_length(ci)
            try:
                lo, hi = confidence_interval_a_rho(grid, a, config.alpha)
                rec["covered_a_rho"] = lo <= truth <= hi
                rec["length_a_rho"] = hi - lo
            except EmptyConfidenceSet:
                rec["covered_a_rho"], rec["length_a_rho"] = False, 0.0
        except NetgamesError as exc:
            rec.update(failed=True, error=f"{type(exc).__name__}: {exc}", covered_beta=False, length_beta=np.nan, covered_a_rho=False, length_a_rho=np.nan)
        out.append(rec)
    return out


def _task(args):
    config, rep, n, param = args
    return run_replication(config, rep, n, param)


def _summarize(config: ExperimentConfig, records: list) -> list:
    cells = []
    for n, param in config.graph_cells():
        for b0 in config.beta0:
            rs = [r for r in records if r["n"] == n and r["param"] == param and r["beta0"] == b0]
            ok = [r for r in rs if not r["failed"]]
            lb = np.array([r["length_beta"] for r in ok])
            lr = np.array([r["length_a_rho"] for r in ok])
            mean = lambda x: float(np.mean(x)) if len(x) else float("nan")
            sd = lambda x: float(np.std(x, ddof=1)) if len(x) > 1 else float("nan")
            cells.append(
                {
                    "family": config.family,
                    "n": n,
                    "param": param,
                    "beta0": b0,
                    "model": config.inference_model,
                    "R": len(rs),
                    "coverage_beta": mean([r["covered_beta"] for r in ok]),
                    "coverage_a_rho": mean([r["covered_a_rho"] for r in ok]),
                    "mean_length_beta": mean(lb),
                    "mean_length_a_rho": mean(lr),
                    "sd_length_beta": sd(lb),
                    "sd_length_a_rho": sd(lr),
                    "failures": len(rs) - len(ok),
                }
            )
    return cells


def run_coverage_experiment(config: ExperimentConfig, out_dir=None, reps=None, strict: bool = True, progress=None) -> CoverageReport:
    """Coverage and mean length of the beta and a'rho confidence sets per cell.

    ``reps`` overrides the replication indices (default ``range(R)``); any
    order gives the same report.  With ``strict`` a cell whose failure
    share exceeds the budget raises after the outputs are written.
    """
    t0 = time.perf_counter()
    reps = list(range(config.R)) if reps is None else [int(r) for r in reps]
    tasks = [(config, r, n, p) for r in reps for n, p in config.graph_cells()]
    records: list = []
    if config.threads > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=config.threads) as ex:
            for res in ex.map(_task, tasks, chunksize=max(1, len(tasks) // (4 * config.threads))):
                records.extend(res)
    else:
        for k, t in enumerate(tasks):
            records.extend(_task(t))
            if progress is not None:
                progress(k + 1, len(tasks))
    records.sort(key=lambda r: (r["n"], r["param"], r["beta0"], r["rep"]))
    report = CoverageReport(config, records, _summarize(config, records), time.perf_counter() - t0)
    if out_dir is not None:
        report.write(out_dir)
    bad = report.budget_exceeded()
    if strict and bad:
        worst = max(bad, key=lambda c: c["failures"])
        raise FailureBudgetExceeded(
            f"{len(bad)} cell(s) exceed the {FAILURE_BUDGET:.0%} failure budget "
            f"(worst: n={worst['n']}, param={worst['param']}, beta0={worst['beta0']}, {worst['failures']}/{worst['R']})"
        )
    return report


# ---------------------------------------------------------------------------
# externality curves


@dataclass
class AneComparison:
    family: str
    betas: np.ndarray
    orders: tuple
    curves: dict  # (network, model) -> array over betas, model is an int order or "eq"
    sizes: dict  # network -> dict of averaged n, d_mx, d_av
    draws: int
    base_seed: int

    def rows(self):
        for net in ("A", "B", "C"):
            for model in ["eq", *self.orders]:
                label = "eq" if model == "eq" else f"m={model}"
                for b, v in zip(self.betas, self.curves[(net, model)]):
                    yield {"family": self.family, "network": net, "model": label, "beta": float(b), "ane": float(v)}

    def write(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        cfg = {"family": self.family, "draws": self.draws, "base_seed": self.base_seed, "orders": list(self.orders), "betas": self.betas.tolist()}
        h = hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()[:12]
        with open(out / "ane_curves.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["family", "network", "model", "beta", "ane", "config_hash", "base_seed"])
            for r in self.rows():
                w.writerow([r["family"], r["network"], r["model"], _fmt(r["beta"]), _fmt(r["ane"]), h, self.base_seed])
        manifest = {"kind": "ane", "config": cfg, "config_hash": h, "base_seed": self.base_seed, "networks": self.sizes}
        (out / "manifest.json").write_text(json.dumps(manifest, indent=2))


ANE_PROTOCOLS = {
    # big graph size, nested radius k, generator
    "er": (10_000, 3, lambda n, rng: gen_erdos_renyi(n, 5.0, rng)),
    "ba": (10_000, 2, lambda n, rng: gen_barabasi_albert(n, 2, seed_size=20, seed_p=1.0 / 19.0, rng=rng)),
}


def run_ane_comparison(
    family: str = "er",
    draws: int = 50,
    betas=None,
    orders=ANE_ORDERS,
    base_seed: int = 2024,
    root: int = 0,
    n_big: int | None = None,
    out_dir=None,
) -> AneComparison:
    """Average externality of the equilibrium and of behavioral orders on nested subgraphs.

    Each draw grows a large graph, cuts balls of radius k, k+1 and k+2
    around ``root`` (networks A, B and C) and evaluates every model on the
    same beta grid.  Curves are averaged over draws.
    """
    family = family.lower()
    if family not in ANE_PROTOCOLS:
        raise InvalidParameter(f"unknown graph family {family!r}")
    size, k, gen = ANE_PROTOCOLS[family]
    size = n_big or size
    betas = ANE_BETAS if betas is None else np.asarray(betas, dtype=float)
    orders = tuple(int(m) for m in orders)
    acc = {(net, m): np.zeros(betas.size) for net in "ABC" for m in ["eq", *orders]}
    stats = {net: np.zeros(3) for net in "ABC"}
    for d in range(draws):
        g = gen(size, rng_streams(base_seed, d).graph)
        for net, (sub, _) in zip("ABC", extract_nested_subgraphs(g, root, k)):
            prof = strategies.ane_profile(sub, betas, orders)
            for m in ["eq", *orders]:
                acc[(net, m)] += prof[m]
            stats[net] += [sub.n, sub.max_degree, sub.average_degree]
    curves = {key: v / draws for key, v in acc.items()}
    sizes = {net: dict(zip(("n", "d_mx", "d_av"), (s / draws).tolist())) for net, s in stats.items()}
    res = AneComparison(family, betas, orders, curves, sizes, draws, base_seed)
    if out_dir is not None:
        res.write(out_dir)
    return res


# ---------------------------------------------------------------------------
# convergence of behavioral responses


@dataclass
class ConvergenceResult:
    betas: np.ndarray
    orders: np.ndarray
    deviation: np.ndarray  # (len(betas), len(orders)) max-norm gaps
    rates: np.ndarray
    meta: dict = field(default_factory=dict)

    def write(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        h = hashlib.sha256(json.dumps(self.meta, sort_keys=True).encode()).hexdigest()[:12]
        seed = self.meta.get("seed")
        with open(out / "convergence.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["beta", "m", "max_deviation", "fitted_rate", "config_hash", "seed"])
            for a, b in enumerate(self.betas):
                for t, m in enumerate(self.orders):
                    w.writerow([_fmt(float(b)), int(m), repr(float(self.deviation[a, t])), _fmt(float(self.rates[a])), h, seed])
        manifest = {"kind": "convergence", "config": self.meta, "config_hash": h, "rates": dict(zip(map(str, self.betas.tolist()), self.rates.tolist()))}
        (out / "manifest.json").write_text(json.dumps(manifest, indent=2, default=str))


def fitted_rate(dev: np.ndarray, orders: np.ndarray, floor: float = 1e-11) -> float:
    """exp of the least-squares slope of log deviation on m, over deviations above ``floor``."""
    ok = (dev > floor) & (orders >= 1)
    if ok.sum() < 2:
        return float("nan")
    slope = np.polyfit(orders[ok], np.log(dev[ok]), 1)[0]
    return float(np.exp(slope))


def run_convergence_experiment(
    family: str = "er",
    n: int = 300,
    param: float = 3.0,
    betas=(-0.5, -0.3, 0.0, 0.3, 0.5),
    m_max: int = 50,
    seed: int = 7,
    out_dir=None,
) -> ConvergenceResult:
    """Max-norm gap between order-m responses and the equilibrium, private shocks off."""
    streams = rng_streams(seed, 0)
    g = make_graph(family, n, param, streams.graph)
    types = simulate_types(n, 3, 2, TypeSpec(eta_var=0.0), streams)
    types = NodeData(types.X1, types.X2, types.eps, np.zeros(n))
    base = ModelParams(0.0, np.array([2.0, 4.0, 1.0]), np.array([3.0, 4.0]))
    betas = np.asarray(betas, dtype=float)
    orders = np.arange(m_max + 1)
    dev = np.zeros((betas.size, orders.size))
    for a, b in enumerate(betas):
        p = base.with_beta(float(b))
        y_eq = strategies.equilibrium_outcomes(g, types, p)
        for m in orders:
            dev[a, m] = np.max(np.abs(strategies.best_response_m(g, types, p, int(m)) - y_eq))
    rates = np.array([fitted_rate(dev[a], orders) for a in range(betas.size)])
    meta = {"family": family, "n": n, "param": param, "betas": betas.tolist(), "m_max": m_max, "seed": seed}
    res = ConvergenceResult(betas, orders, dev, rates, meta)
    if out_dir is not None:
        res.write(out_dir)
    return res
