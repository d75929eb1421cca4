"""Per-agent protocol step: measure, receive, assign, update, send.

A tick reads only the agent's own state and its neighbours' messages from
the previous round. The update is split into three phases so that the
engine can interleave relay exchanges inside a round:

``begin_tick``
    measure, validate the inbox, assign the cluster, compute the coupling
    terms and provisional rates (relay rows use the neighbours' rates from
    the previous round).
``relay_sweep``
    recompute the relay rows from the neighbours' current provisional
    rates; called ``sweeps - 1`` times.
``finish_tick``
    apply the Euler step and publish the outbox message.

``agent_tick`` runs ``begin_tick`` + ``finish_tick``, i.e. a single sweep.

Cluster rows carry a hop distance to the nearest member (0 for a member).
A row whose distance has reached ``hop_cap`` has no member reachable; it
keeps the coupling term but stops relaying rates, otherwise an empty
cluster's estimates would drift without bound.

Membership changes move estimate mass explicitly: a new member injects
its state relative to its own current estimate of the cluster, and the
cluster it left receives the leaver's offset (estimate minus state).
Round 1 treats every agent as a new member of its seed cluster.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .clustering import HysteresisPolicy, Membership, assign_cluster, nearest_cluster
from .consensus import ClusterEstimates, NumericalFault, StateSample, StructuralError


class ProtocolError(RuntimeError):
    def __init__(self, message: str, sender: int | None = None, round: int | None = None):
        super().__init__(message)
        self.sender = sender
        self.round = round


def _frozen(a) -> np.ndarray:
    arr = np.array(a, dtype=float)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class EstimateMessage:
    sender: int
    round: int
    feature_estimates: np.ndarray
    aux_estimates: np.ndarray
    feature_est_rates: np.ndarray
    aux_est_rates: np.ndarray
    member_distance: tuple[int, ...]


@dataclass(frozen=True)
class AgentParams:
    neighbors: tuple[int, ...]
    alpha: float
    policy: HysteresisPolicy
    hop_cap: int
    switch_transfer: bool = True


@dataclass(frozen=True)
class AgentState:
    id: int
    params: AgentParams
    round: int
    sample: StateSample
    membership: Membership
    estimates: ClusterEstimates
    member_distance: tuple[int, ...]
    outbox: EstimateMessage
    # Reference the first member injection is measured from; None once used.
    injection_ref: tuple[np.ndarray, np.ndarray] | None = None

    @property
    def cluster(self) -> int:
        return self.membership.current_cluster


def _message(agent_id: int, rnd: int, est: ClusterEstimates, dist: tuple[int, ...]) -> EstimateMessage:
    return EstimateMessage(agent_id, rnd, _frozen(est.feature), _frozen(est.aux),
                           _frozen(est.feature_rates), _frozen(est.aux_rates), dist)


def init_agent(id: int, initial_sample: StateSample, initial_estimates, params: AgentParams) -> AgentState:
    """Round-0 state: seeds as estimates, raw nearest-seed membership, zero rates.

    ``initial_estimates`` is a pair ``(feature (M, n), aux (M, m))``.
    """
    feat, aux = initial_estimates
    est = ClusterEstimates.from_seeds(id, feat, aux)
    if est.feature.shape[1] != initial_sample.feature.shape[0]:
        raise ValueError(f"agent {id}: feature seeds have dimension {est.feature.shape[1]}, "
                         f"state has {initial_sample.feature.shape[0]}")
    if est.aux.shape[1] != initial_sample.aux.shape[0]:
        raise ValueError(f"agent {id}: aux seeds have dimension {est.aux.shape[1]}, "
                         f"state has {initial_sample.aux.shape[0]}")
    if not (np.all(np.isfinite(est.feature)) and np.all(np.isfinite(est.aux))):
        raise NumericalFault("non-finite seed estimate", agent=id)
    try:
        k = nearest_cluster(initial_sample.feature, est.feature)
    except NumericalFault as exc:
        exc.agent, exc.channel, exc.round = id, "feature", 0
        raise
    membership = Membership(id, k)
    # Non-member rows start optimistic (distance 1); they climb to the cap
    # within hop_cap rounds if no member exists.
    dist = tuple(0 if j == k else 1 for j in range(1, est.cluster_count + 1))
    ref = (est.feature.copy(), est.aux.copy())
    return AgentState(id, params, 0, initial_sample, membership, est, dist, _message(id, 0, est, dist), ref)


@dataclass
class TickDraft:
    state: AgentState
    sample: StateSample
    membership: Membership
    member_distance: tuple[int, ...]
    nbr_feature: np.ndarray       # (deg, M, n)
    nbr_aux: np.ndarray           # (deg, M, m)
    relay_rows: np.ndarray        # indices of rows that relay neighbour rates
    rate_feature: np.ndarray      # provisional rates (M, n)
    rate_aux: np.ndarray
    sweeps: int = 1
    fresh: np.ndarray = field(default=None)  # (deg,) bool, False for stale messages
    coupling_feature: np.ndarray = field(default=None)  # alpha * sum_l (est_l - own), all rows
    coupling_aux: np.ndarray = field(default=None)


def _check_inbox(state: AgentState, inbox: Sequence[EstimateMessage], allow_stale: bool) -> list[EstimateMessage]:
    by_sender: dict[int, EstimateMessage] = {}
    for msg in inbox:
        if msg.sender not in state.params.neighbors:
            raise ProtocolError(f"agent {state.id}: message from non-neighbour {msg.sender}", msg.sender, msg.round)
        if msg.sender in by_sender:
            raise ProtocolError(f"agent {state.id}: duplicate message from {msg.sender}", msg.sender, msg.round)
        if msg.round != state.round and not (allow_stale and msg.round < state.round):
            raise ProtocolError(f"agent {state.id}: message from {msg.sender} stamped round {msg.round}, "
                                f"expected {state.round}", msg.sender, msg.round)
        by_sender[msg.sender] = msg
    missing = [j for j in state.params.neighbors if j not in by_sender]
    if missing:
        raise ProtocolError(f"agent {state.id}: no message from neighbour {missing[0]} for round {state.round}",
                            missing[0], state.round)
    return [by_sender[j] for j in state.params.neighbors]


def begin_tick(state: AgentState, inbox: Sequence[EstimateMessage], step: float, measured,
               *, allow_stale: bool = False) -> TickDraft:
    msgs = _check_inbox(state, inbox, allow_stale)
    x, z = measured
    sample = state.sample.advance(x, z, step)
    est = state.estimates
    M, n = est.feature.shape
    m = est.aux.shape[1]
    rnd = state.round + 1

    if not (np.all(np.isfinite(sample.feature)) and np.all(np.isfinite(sample.aux))):
        raise NumericalFault("non-finite measured state", agent=state.id, round=rnd)
    try:
        membership = assign_cluster(sample.feature, est.feature, state.membership, state.params.policy)
    except NumericalFault as exc:
        exc.round = rnd
        raise
    k = membership.current_cluster

    # A fresh member measures its injection from its own estimate of the
    # cluster (the seed on round 1), so the estimate starts at its state.
    prev_k = state.membership.current_cluster
    switched = k != prev_k
    transfer = switched and state.params.switch_transfer
    ref = state.injection_ref or ((est.feature, est.aux) if transfer else None)
    if ref is None:
        inj_f, inj_a = sample.feature_rate, sample.aux_rate
    else:
        inj_f = (sample.feature - ref[0][k - 1]) / step
        inj_a = (sample.aux - ref[1][k - 1]) / step

    cap = state.params.hop_cap
    dist = []
    for j in range(M):
        if j == k - 1:
            dist.append(0)
        else:
            nearest = min((msg.member_distance[j] for msg in msgs), default=cap)
            dist.append(min(nearest + 1, cap))

    deg = len(msgs)
    if deg:
        nbr_f = np.array([msg.feature_estimates for msg in msgs])
        nbr_a = np.array([msg.aux_estimates for msg in msgs])
        fresh = np.array([msg.round == state.round for msg in msgs])
    else:
        nbr_f, nbr_a, fresh = np.zeros((0, M, n)), np.zeros((0, M, m)), np.zeros(0, dtype=bool)
    for arr, channel in ((nbr_f, "feature"), (nbr_a, "aux")):
        if not _all_finite(arr):
            raise NumericalFault("non-finite neighbour estimate", agent=state.id, channel=channel, round=rnd)

    alpha = state.params.alpha
    # coupling for every row at once: alpha * sum_l (est_l - own)
    coup_f = alpha * (nbr_f.sum(axis=0) - deg * est.feature)
    coup_a = alpha * (nbr_a.sum(axis=0) - deg * est.aux)
    rate_f = np.zeros((M, n))
    rate_a = np.zeros((M, m))
    rate_f[k - 1] = inj_f + coup_f[k - 1]
    rate_a[k - 1] = inj_a + coup_a[k - 1]

    others = [j for j in range(M) if j != k - 1]
    relay = np.array([j for j in others if dist[j] < cap], dtype=int)
    idle = np.array([j for j in others if dist[j] >= cap], dtype=int)
    if idle.size:
        rate_f[idle] = coup_f[idle]
        rate_a[idle] = coup_a[idle]

    if transfer and state.injection_ref is None:
        # A leaving member hands its offset (estimate - state) back to the
        # cluster it left; without this every switch leaves a permanent bias.
        j = prev_k - 1
        coup_f[j] += (est.feature[j] - state.sample.feature) / step
        coup_a[j] += (est.aux[j] - state.sample.aux) / step
        if dist[j] >= cap:
            rate_f[j] = coup_f[j]
            rate_a[j] = coup_a[j]
    draft = TickDraft(state, sample, membership, tuple(dist), nbr_f, nbr_a, relay, rate_f, rate_a, 1, fresh,
                      coup_f, coup_a)
    if relay.size:
        if not deg:
            raise StructuralError("non-member with no neighbors cannot track cluster j")
        _relay(draft, np.array([msg.feature_est_rates for msg in msgs]),
               np.array([msg.aux_est_rates for msg in msgs]))
    return draft


def _all_finite(arr: np.ndarray) -> bool:
    # one reduction in the common case; overflow falls through to the full check
    return bool(np.isfinite(arr.sum()) or np.isfinite(arr).all())


def _relay(draft: TickDraft, nbr_rate_f: np.ndarray, nbr_rate_a: np.ndarray) -> None:
    """Pass-through law on the relay rows: mean neighbour rate plus coupling."""
    rows = draft.relay_rows
    deg = draft.fresh.shape[0]
    for arr, channel in ((nbr_rate_f, "feature"), (nbr_rate_a, "aux")):
        if not _all_finite(arr):
            raise NumericalFault("non-finite neighbour rate", agent=draft.state.id, channel=channel,
                                 round=draft.state.round + 1)
    # Rates carried by stale (delayed or re-used) messages are not relayed again.
    if draft.fresh.all():
        mean_f = nbr_rate_f[:, rows].sum(axis=0) / deg
        mean_a = nbr_rate_a[:, rows].sum(axis=0) / deg
    else:
        w = draft.fresh.astype(float)[:, None, None]
        mean_f = (nbr_rate_f[:, rows] * w).sum(axis=0) / deg
        mean_a = (nbr_rate_a[:, rows] * w).sum(axis=0) / deg
    draft.rate_feature[rows] = mean_f + draft.coupling_feature[rows]
    draft.rate_aux[rows] = mean_a + draft.coupling_aux[rows]


def provisional_rates(draft: TickDraft) -> tuple[np.ndarray, np.ndarray]:
    return draft.rate_feature.copy(), draft.rate_aux.copy()


def relay_sweep(draft: TickDraft, neighbor_rates: Mapping[int, tuple[np.ndarray, np.ndarray]]) -> TickDraft:
    """Refresh relay rows from the neighbours' provisional rates of this round.

    Neighbours missing from ``neighbor_rates`` (dropped link) contribute zero.
    """
    nbrs = draft.state.params.neighbors
    M, n = draft.rate_feature.shape
    m = draft.rate_aux.shape[1]
    if draft.relay_rows.size and nbrs:
        zero = (np.zeros((M, n)), np.zeros((M, m)))
        pairs = [neighbor_rates.get(j, zero) for j in nbrs]
        fresh = draft.fresh
        draft.fresh = np.array([j in neighbor_rates for j in nbrs])
        _relay(draft, np.array([p[0] for p in pairs]), np.array([p[1] for p in pairs]))
        draft.fresh = fresh
    draft.sweeps += 1
    return draft


def finish_tick(draft: TickDraft, step: float) -> AgentState:
    state = draft.state
    rnd = state.round + 1
    new_f = state.estimates.feature + step * draft.rate_feature
    new_a = state.estimates.aux + step * draft.rate_aux
    for arr, channel in ((new_f, "feature"), (new_a, "aux")):
        if not _all_finite(arr):
            raise NumericalFault("non-finite updated estimate", agent=state.id, channel=channel, round=rnd)
    est = state.estimates.with_values(new_f, new_a, step)
    return AgentState(state.id, state.params, rnd, draft.sample, draft.membership, est,
                      draft.member_distance, _message(state.id, rnd, est, draft.member_distance), None)


def agent_tick(state: AgentState, inbox: Sequence[EstimateMessage], step: float, measured,
               *, allow_stale: bool = False) -> AgentState:
    """Single-sweep tick: relay rows use the neighbours' previous-round rates."""
    return finish_tick(begin_tick(state, inbox, step, measured, allow_stale=allow_stale), step)
