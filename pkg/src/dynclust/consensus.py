"""Forward-Euler discretization of the cluster-average estimators.

Two update laws exist per cluster channel. An agent inside cluster ``k``
injects the derivative of its own state and couples to its neighbours
(member law). For every other cluster it relays the average of its
neighbours' estimate derivatives instead of injecting anything
(pass-through law). Both laws are used unchanged for the feature channel
and for the auxiliary channel.

All functions accept a leading "row" shape, so the same call updates a
single estimate vector of shape ``(d,)`` or a stack of them ``(r, d)``;
neighbour arguments carry one extra leading axis for the neighbour index.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .graph import Graph, laplacian


class NumericalFault(ArithmeticError):
    """A non-finite value entered or left an estimator update."""

    def __init__(self, message: str, agent: int | None = None, channel: str | None = None, round: int | None = None):
        super().__init__(message)
        self.agent = agent
        self.channel = channel
        self.round = round

    def __str__(self) -> str:
        where = [f"{k}={v}" for k, v in (("round", self.round), ("agent", self.agent), ("channel", self.channel)) if v is not None]
        base = super().__str__()
        return f"{base} ({', '.join(where)})" if where else base


class StructuralError(ValueError):
    pass


def _finite(arr: np.ndarray, what: str, agent: int | None, channel: str | None) -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise NumericalFault(f"non-finite {what}", agent=agent, channel=channel)
    return arr


def _stack(neighbor_values, like: np.ndarray) -> np.ndarray:
    arr = np.asarray(neighbor_values, dtype=float)
    if arr.size == 0:
        return np.zeros((0,) + like.shape)
    return arr


def coupling_term(own_estimate, neighbor_estimates, alpha: float) -> np.ndarray:
    """``sum_l alpha * (est_l - est_i)`` over the given neighbours."""
    own = np.asarray(own_estimate, dtype=float)
    nbr = _stack(neighbor_estimates, own)
    if nbr.shape[0] == 0:
        return np.zeros_like(own)
    return alpha * np.sum(nbr - own, axis=0)


def member_rate(own_rate, own_estimate, neighbor_estimates, alpha: float) -> np.ndarray:
    return np.asarray(own_rate, dtype=float) + coupling_term(own_estimate, neighbor_estimates, alpha)


def passthrough_rate(neighbor_rates, own_estimate, neighbor_estimates, alpha: float) -> np.ndarray:
    own = np.asarray(own_estimate, dtype=float)
    rates = _stack(neighbor_rates, own)
    degree = _stack(neighbor_estimates, own).shape[0]
    if degree == 0:
        raise StructuralError("non-member with no neighbors cannot track cluster j")
    if rates.shape[0] != degree:
        raise StructuralError(f"{rates.shape[0]} neighbour rates for {degree} neighbour estimates")
    return rates.sum(axis=0) / degree + coupling_term(own, neighbor_estimates, alpha)


def step_member_estimate(own_rate, own_estimate, neighbor_estimates, alpha: float, step: float,
                         *, agent: int | None = None, channel: str | None = None) -> np.ndarray:
    """One explicit Euler step of the member law.

    Returns ``own + step * (own_rate + sum_l alpha * (est_l - own))``.
    """
    own = _finite(np.asarray(own_estimate, dtype=float), "own estimate", agent, channel)
    _finite(np.asarray(own_rate, dtype=float), "state rate", agent, channel)
    _finite(_stack(neighbor_estimates, own), "neighbour estimate", agent, channel)
    out = own + step * member_rate(own_rate, own, neighbor_estimates, alpha)
    return _finite(out, "updated estimate", agent, channel)


def step_passthrough_estimate(neighbor_rates, own_estimate, neighbor_estimates, alpha: float, step: float,
                              *, agent: int | None = None, channel: str | None = None) -> np.ndarray:
    """One explicit Euler step of the pass-through law.

    Returns ``own + step * (mean_l rate_l + sum_l alpha * (est_l - own))``;
    the neighbour count is taken from ``neighbor_estimates``.
    """
    own = _finite(np.asarray(own_estimate, dtype=float), "own estimate", agent, channel)
    _finite(_stack(neighbor_rates, own), "neighbour rate", agent, channel)
    _finite(_stack(neighbor_estimates, own), "neighbour estimate", agent, channel)
    out = own + step * passthrough_rate(neighbor_rates, own, neighbor_estimates, alpha)
    return _finite(out, "updated estimate", agent, channel)


def finite_difference_rate(current, previous, step: float) -> np.ndarray:
    cur = np.asarray(current, dtype=float)
    if previous is None:
        return np.zeros_like(cur)
    return (cur - np.asarray(previous, dtype=float)) / step


def max_stable_step(g: Graph) -> float:
    """Explicit-Euler stability bound ``2 / lambda_max(L)``; ``inf`` for an edgeless graph."""
    lam = float(np.linalg.eigvalsh(laplacian(g))[-1])
    return math.inf if lam <= 0 else 2.0 / lam


@dataclass(frozen=True)
class StateSample:
    feature: np.ndarray
    aux: np.ndarray
    feature_rate: np.ndarray
    aux_rate: np.ndarray

    @classmethod
    def initial(cls, feature, aux=()) -> "StateSample":
        x = np.asarray(feature, dtype=float).reshape(-1)
        z = np.asarray(aux, dtype=float).reshape(-1)
        return cls(x, z, np.zeros_like(x), np.zeros_like(z))

    def advance(self, feature, aux, step: float) -> "StateSample":
        x = np.asarray(feature, dtype=float).reshape(self.feature.shape)
        z = np.asarray(aux, dtype=float).reshape(self.aux.shape)
        return StateSample(x, z, finite_difference_rate(x, self.feature, step),
                           finite_difference_rate(z, self.aux, step))


@dataclass(frozen=True)
class ClusterEstimates:
    """Per-agent cluster averages: ``feature`` is (M, n), ``aux`` is (M, m)."""

    owner: int
    feature: np.ndarray
    aux: np.ndarray
    feature_rates: np.ndarray
    aux_rates: np.ndarray

    def __post_init__(self) -> None:
        if self.feature.ndim != 2 or self.aux.ndim != 2 or self.feature.shape[0] != self.aux.shape[0]:
            raise ValueError(f"estimate shapes {self.feature.shape} / {self.aux.shape} are not (M, n) / (M, m)")
        if self.feature_rates.shape != self.feature.shape or self.aux_rates.shape != self.aux.shape:
            raise ValueError("rate arrays must match estimate arrays")

    @property
    def cluster_count(self) -> int:
        return self.feature.shape[0]

    @classmethod
    def from_seeds(cls, owner: int, feature_seeds, aux_seeds) -> "ClusterEstimates":
        f = np.array(feature_seeds, dtype=float, ndmin=2)
        a = np.array(aux_seeds, dtype=float)
        if a.size == 0:
            a = np.zeros((f.shape[0], 0))
        a = a.reshape(f.shape[0], -1)
        return cls(owner, f, a, np.zeros_like(f), np.zeros_like(a))

    def with_values(self, feature, aux, step: float) -> "ClusterEstimates":
        """New estimates with rates ``(new - old) / step``."""
        return replace(self, feature=feature, aux=aux,
                       feature_rates=(feature - self.feature) / step,
                       aux_rates=(aux - self.aux) / step)
