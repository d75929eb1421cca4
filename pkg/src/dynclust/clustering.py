"""Nearest-estimate cluster assignment with an optional switching hysteresis.

Cluster indices are 1-based. The raw rule picks the cluster whose average
estimate is closest (Euclidean) to the agent's feature state, ties going
to the lowest index. :class:`HysteresisPolicy` delays a switch until the
challenger is better by a relative ``margin`` for ``dwell_rounds``
consecutive rounds; ``HysteresisPolicy(0, 0)`` is the raw rule.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np

from .consensus import ClusterEstimates, NumericalFault


@dataclass(frozen=True)
class HysteresisPolicy:
    margin: float = 0.05
    dwell_rounds: int = 10

    def __post_init__(self) -> None:
        if not 0.0 <= self.margin < 1.0:
            raise ValueError(f"hysteresis margin must lie in [0, 1), got {self.margin}")
        if int(self.dwell_rounds) != self.dwell_rounds or self.dwell_rounds < 0:
            raise ValueError(f"dwell_rounds must be a non-negative integer, got {self.dwell_rounds}")

    @classmethod
    def raw(cls) -> "HysteresisPolicy":
        return cls(0.0, 0)


@dataclass(frozen=True)
class Membership:
    owner: int
    current_cluster: int
    candidate_cluster: int | None = None
    candidate_streak: int = 0
    switch_count: int = 0


def distance(x, estimate) -> float:
    a = np.asarray(x, dtype=float)
    b = np.asarray(estimate, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return float(np.linalg.norm(a - b))


def distances(x, estimates) -> np.ndarray:
    est = np.asarray(estimates, dtype=float)
    a = np.asarray(x, dtype=float)
    if est.ndim != 2 or est.shape[1] != a.shape[0]:
        raise ValueError(f"dimension mismatch: state {a.shape} vs estimates {est.shape}")
    # overflow becomes inf and is reported by the callers as a fault
    with np.errstate(over="ignore", invalid="ignore"):
        return np.linalg.norm(est - a, axis=1)


def nearest_cluster(x, estimates) -> int:
    """Raw rule: 1-based index of the closest estimate (lowest index on ties)."""
    d = distances(x, estimates)
    if not np.all(np.isfinite(d)):
        raise NumericalFault("non-finite cluster estimate")
    return int(np.argmin(d)) + 1


def assign_cluster(x, estimates, membership: Membership, policy: HysteresisPolicy) -> Membership:
    d = distances(x, estimates)
    if not np.all(np.isfinite(d)):
        raise NumericalFault("non-finite cluster estimate", agent=membership.owner, channel="feature")
    best = int(np.argmin(d)) + 1
    current = membership.current_cluster
    if best == current:
        return replace(membership, candidate_cluster=None, candidate_streak=0)

    qualifies = policy.margin == 0.0 or d[best - 1] < (1.0 - policy.margin) * d[current - 1]
    if not qualifies:
        return replace(membership, candidate_cluster=None, candidate_streak=0)

    streak = membership.candidate_streak + 1 if membership.candidate_cluster == best else 1
    if streak >= policy.dwell_rounds:
        return Membership(membership.owner, best, None, 0, membership.switch_count + 1)
    return replace(membership, candidate_cluster=best, candidate_streak=streak)


class ClusterResults(NamedTuple):
    cluster: int                  # current membership
    feature_averages: np.ndarray  # (M, n)
    aux_averages: np.ndarray      # (M, m)


def cluster_results(membership: Membership, estimates: ClusterEstimates) -> ClusterResults:
    return ClusterResults(membership.current_cluster, estimates.feature.copy(), estimates.aux.copy())
