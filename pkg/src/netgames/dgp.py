"""Node types, model parameters and simulated datasets."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import InvalidParameter
from .graphs import PayoffGraph

__all__ = [
    "NodeData",
    "ModelParams",
    "TypeSpec",
    "Streams",
    "rng_streams",
    "simulate_types",
    "assemble_dataset",
    "MC_PARAMS",
]


class Streams(NamedTuple):
    """Independent generators for each random ingredient of one replication."""

    graph: np.random.Generator
    x1: np.random.Generator
    x2: np.random.Generator
    eps: np.random.Generator
    eta: np.random.Generator


def rng_streams(seed: int, rep: int = 0) -> Streams:
    """Derive the five named streams for replication ``rep`` of ``seed``.

    Streams come from ``SeedSequence(seed, spawn_key=(rep,))`` so that
    replications are reproducible and disjoint regardless of run order.
    """
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(rep),))
    return Streams(*(np.random.default_rng(s) for s in ss.spawn(5)))


@dataclass
class NodeData:
    X1: np.ndarray
    X2: np.ndarray
    eps: np.ndarray | None = None
    eta: np.ndarray | None = None
    y: np.ndarray | None = None

    def __post_init__(self):
        self.X1 = np.atleast_2d(np.asarray(self.X1, dtype=float).T).T
        self.X2 = np.atleast_2d(np.asarray(self.X2, dtype=float).T).T
        n = self.X1.shape[0]
        if self.X2.shape[0] != n:
            raise InvalidParameter("X1 and X2 row counts differ")
        for name in ("eps", "eta", "y"):
            v = getattr(self, name)
            if v is not None:
                v = np.asarray(v, dtype=float).reshape(-1)
                if v.size != n:
                    raise InvalidParameter(f"{name} has {v.size} entries, expected {n}")
                setattr(self, name, v)
        for name in ("X1", "X2", "eps", "eta", "y"):
            v = getattr(self, name)
            if v is not None and not np.all(np.isfinite(v)):
                raise InvalidParameter(f"{name} contains non-finite values")

    @property
    def n(self) -> int:
        return self.X1.shape[0]

    @property
    def d_x1(self) -> int:
        return self.X1.shape[1]

    @property
    def d_x2(self) -> int:
        return self.X2.shape[1]

    def with_outcome(self, y) -> "NodeData":
        return NodeData(self.X1, self.X2, self.eps, self.eta, y)

    def subset(self, idx) -> "NodeData":
        pick = lambda v: None if v is None else v[idx]
        return NodeData(self.X1[idx], self.X2[idx], pick(self.eps), pick(self.eta), pick(self.y))


@dataclass(frozen=True)
class ModelParams:
    beta: float
    gamma: np.ndarray
    delta: np.ndarray

    def __post_init__(self):
        if not abs(self.beta) < 1:
            raise InvalidParameter(f"|beta| must be below 1, got {self.beta}")
        object.__setattr__(self, "gamma", np.atleast_1d(np.asarray(self.gamma, dtype=float)))
        object.__setattr__(self, "delta", np.atleast_1d(np.asarray(self.delta, dtype=float)))

    @property
    def rho(self) -> np.ndarray:
        return np.concatenate([self.gamma, self.delta])

    def with_beta(self, beta: float) -> "ModelParams":
        return ModelParams(beta, self.gamma, self.delta)


MC_PARAMS = ModelParams(0.0, np.array([2.0, 4.0, 1.0]), np.array([3.0, 4.0]))


@dataclass(frozen=True)
class TypeSpec:
    """Means and variances of the simulated types.

    Column 0 of X1 is always the intercept.
    """

    x1_mean: float = 1.0
    x1_var: float = 1.0
    x2_mean: float = 3.0
    x2_var: float = 1.0
    eps_var: float = 1.0
    eta_var: float = 1.0

    def __post_init__(self):
        for name in ("x1_var", "x2_var", "eps_var", "eta_var"):
            if getattr(self, name) < 0:
                raise InvalidParameter(f"{name} must be non-negative")


def _as_streams(rng) -> Streams:
    if isinstance(rng, Streams):
        return rng
    if isinstance(rng, np.random.Generator):
        return Streams(*rng.spawn(5))
    return rng_streams(int(rng))


def simulate_types(
    n: int, d_x1: int, d_x2: int, spec: TypeSpec | None = None, rng=0
) -> NodeData:
    """Draw covariates and unobservables for ``n`` nodes.

    ``rng`` may be a :class:`Streams`, a generator (split into streams) or
    an integer seed.
    """
    if d_x1 < 1 or d_x2 < 0:
        raise InvalidParameter("need d_x1 >= 1 and d_x2 >= 0")
    spec = spec or TypeSpec()
    s = _as_streams(rng)
    X1 = np.ones((n, d_x1))
    if d_x1 > 1:
        X1[:, 1:] = s.x1.normal(spec.x1_mean, np.sqrt(spec.x1_var), size=(n, d_x1 - 1))
    X2 = s.x2.normal(spec.x2_mean, np.sqrt(spec.x2_var), size=(n, d_x2))
    eps = s.eps.normal(0.0, np.sqrt(spec.eps_var), size=n)
    eta = s.eta.normal(0.0, np.sqrt(spec.eta_var), size=n)
    return NodeData(X1, X2, eps, eta)


def assemble_dataset(
    g: PayoffGraph, data: NodeData, params: ModelParams, agent_model: str = "simple", m: int | None = None
) -> np.ndarray:
    """Outcomes generated by the chosen behavioral model.

    ``agent_model`` is ``"simple"``, ``"fs"``, ``"equilibrium"`` or
    ``"order-m"`` (with ``m`` given, or spelled ``"order-3"``).
    """
    from . import strategies

    if data.n != g.n:
        raise InvalidParameter("data and graph sizes differ")
    if data.d_x1 != params.gamma.size or data.d_x2 != params.delta.size:
        raise InvalidParameter("parameter dimensions do not match the data")
    model = agent_model.lower()
    if model.startswith("order"):
        if m is None:
            try:
                m = int(model.split("-", 1)[1])
            except (IndexError, ValueError):
                raise InvalidParameter(f"cannot read the order from {agent_model!r}") from None
        return strategies.best_response_m(g, data, params, m)
    if model == "simple":
        return strategies.best_response_simple(g, data, params)
    if model == "fs":
        return strategies.best_response_fs(g, data, params)
    if model == "equilibrium":
        return strategies.equilibrium_outcomes(g, data, params)
    raise InvalidParameter(f"unknown agent model {agent_model!r}")
