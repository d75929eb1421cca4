"""Battery microgrid scenarios built on the clustering protocol.

Scenario A ("loss") clusters batteries on normalized (load, capacity) and
dispatches each battery from its cluster's average load-to-capacity ratio
plus a SoC balancing term. Scenario B ("ves") clusters on (price, capacity)
and forms a virtual energy storage from the clusters a utility accepts.

Both use the auxiliary state ``z = (soc, d soc / dt)`` where the rate is
the backward difference over one round, in the same per-round time unit as
the protocol step.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .agent import AgentState, init_agent
from .consensus import NumericalFault
from .netsim import PerturbationEvent, Scenario


@dataclass(frozen=True)
class BatteryPlant:
    id: int
    capacity: float      # kWh
    local_load: float    # kW
    soc: float
    power_out: float = 0.0  # kW, positive = discharging
    price: float = 0.0
    resistance: float = 1.0

    def __post_init__(self) -> None:
        if not self.capacity > 0:
            raise ValueError(f"battery {self.id}: capacity must be > 0, got {self.capacity}")
        if self.local_load < 0:
            raise ValueError(f"battery {self.id}: local load must be >= 0, got {self.local_load}")
        if not 0.0 <= self.soc <= 1.0:
            raise ValueError(f"battery {self.id}: soc must lie in [0, 1], got {self.soc}")
        if self.price < 0:
            raise ValueError(f"battery {self.id}: price must be >= 0, got {self.price}")
        if not self.resistance > 0:
            raise ValueError(f"battery {self.id}: resistance weight must be > 0, got {self.resistance}")


def soc_step(plant: BatteryPlant, step_hours: float) -> BatteryPlant:
    """Coulomb counting with saturation.

    Power that would push the SoC past 0 (discharging) or 1 (charging) is
    cut to zero for that round.
    """
    if not step_hours > 0:
        raise ValueError(f"step_hours must be > 0, got {step_hours}")
    p = plant.power_out
    if (p > 0 and plant.soc <= 0.0) or (p < 0 and plant.soc >= 1.0):
        return replace(plant, power_out=0.0)
    soc = plant.soc - p * step_hours / plant.capacity
    return replace(plant, soc=min(max(soc, 0.0), 1.0))


def balancing_dispatch(plant: BatteryPlant, feature_avg, soc_avg: float, gain: float,
                       external_rate: float | None = None) -> float:
    """Power command for one battery.

    With ``external_rate`` None (loss scenario) the shared term is the
    cluster's average load per kWh, ``feature_avg = (mean load, mean capacity)``
    in raw units. Otherwise the shared term is ``external_rate`` kW per kWh.
    """
    if not gain > 0:
        raise ValueError(f"gain must be > 0, got {gain}")
    vals = np.asarray(feature_avg, dtype=float)
    if not (np.all(np.isfinite(vals)) and np.isfinite(soc_avg)):
        raise NumericalFault("non-finite cluster estimate in dispatch", agent=plant.id)
    balance = gain * plant.capacity * (plant.soc - soc_avg)
    if external_rate is not None:
        return external_rate * plant.capacity + balance
    y_bar, e_bar = vals
    if not e_bar > 0:
        raise NumericalFault(f"cluster capacity estimate {e_bar} is not positive", agent=plant.id)
    return plant.capacity * (y_bar / e_bar) + balance


def loss_proxy(plants: Sequence[BatteryPlant], resistance_weight: Sequence[float] | None = None) -> float:
    rho = [p.resistance for p in plants] if resistance_weight is None else list(resistance_weight)
    if any(not r > 0 for r in rho):
        raise ValueError("resistance weights must be > 0")
    return float(sum(r * (p.power_out - p.local_load) ** 2 for r, p in zip(rho, plants)))


@dataclass(frozen=True)
class FeatureMap:
    """Min-max normalization against fixed per-feature bounds, with clamping."""

    bounds: tuple[tuple[float, float], ...]

    def __post_init__(self) -> None:
        for lo, hi in self.bounds:
            if not hi > lo:
                raise ValueError(f"feature bounds ({lo}, {hi}) need max > min")

    def normalize(self, raw) -> tuple[np.ndarray, bool]:
        """Returns the normalized vector and whether any entry was clamped."""
        raw = np.asarray(raw, dtype=float)
        lo, hi = np.array(self.bounds).T
        scaled = (raw - lo) / (hi - lo)
        clamped = np.clip(scaled, 0.0, 1.0)
        return clamped, bool(np.any(clamped != scaled))

    def denormalize(self, vec) -> np.ndarray:
        lo, hi = np.array(self.bounds).T
        return lo + np.asarray(vec, dtype=float) * (hi - lo)


@dataclass(frozen=True)
class VesRequirement:
    required_capacity: float
    max_price: float
    pinned_agents: tuple[int, ...]
    seed_estimates: tuple[tuple[float, ...], ...]  # normalized (price, capacity) per cluster

    def __post_init__(self) -> None:
        if not self.pinned_agents:
            raise ValueError("VES requirement needs at least one pinned agent")


@dataclass(frozen=True)
class ClusterOffer:
    cluster: int
    avg_price: float
    avg_capacity: float
    members: int

    @property
    def total_capacity(self) -> float:
        return self.avg_capacity * self.members


@dataclass(frozen=True)
class VesSelection:
    accepted: tuple[int, ...]
    offered_capacity: float
    reason: str


def ves_select(report: Sequence[ClusterOffer], requirement: VesRequirement) -> VesSelection:
    """Cheapest-first acceptance of price-eligible clusters.

    Eligible clusters (non-empty, average price at most the cap) are taken
    in ascending price order, lower index first on ties, until their total
    capacity covers the requirement. If all eligible clusters together fall
    short, nothing is accepted.
    """
    eligible = sorted((o for o in report if o.members > 0 and o.avg_price <= requirement.max_price),
                      key=lambda o: (o.avg_price, o.cluster))
    if not eligible:
        return VesSelection((), 0.0, "no cluster within the price cap")
    chosen, total = [], 0.0
    for offer in eligible:
        if total >= requirement.required_capacity:
            break
        chosen.append(offer.cluster)
        total += offer.total_capacity
    if total < requirement.required_capacity:
        return VesSelection((), 0.0, "insufficient capacity within the price cap")
    return VesSelection(tuple(sorted(chosen)), total, "accepted")


def pin_requirements(requirement: VesRequirement, agents: Sequence[AgentState],
                     default_seeds) -> list[AgentState]:
    """Re-seed round-0 agents: pinned ones get the utility's seeds, the rest ``default_seeds``."""
    ids = {a.id for a in agents}
    unknown = [i for i in requirement.pinned_agents if i not in ids]
    if unknown:
        raise ValueError(f"pinned agents {unknown} are not in the network")
    out = []
    for a in agents:
        feat = requirement.seed_estimates if a.id in requirement.pinned_agents else default_seeds
        out.append(init_agent(a.id, a.sample, (np.array(feat, dtype=float), a.estimates.aux), a.params))
    return out


class MicrogridScenario(Scenario):
    """Shared plumbing: plants, normalized features, SoC dynamics, metrics."""

    aux_dim = 2

    def __init__(self, plants: Sequence[BatteryPlant], feature_map: FeatureMap, gain: float,
                 step_hours: float, protocol_step: float, feature_seeds, aux_seeds=None):
        self.plants = list(plants)
        self.feature_map = feature_map
        self.gain = gain
        self.step_hours = step_hours
        self.protocol_step = protocol_step
        self.feature_dim = len(feature_map.bounds)
        self.feature_seeds = np.array(feature_seeds, dtype=float, ndmin=2)
        M = self.feature_seeds.shape[0]
        self.aux_seeds = (np.tile([np.mean([p.soc for p in plants]), 0.0], (M, 1)) if aux_seeds is None
                          else np.array(aux_seeds, dtype=float).reshape(M, 2))
        self._prev_soc = [p.soc for p in self.plants]
        self.cumulative_loss = 0.0
        self.clamped: set[int] = set()

    # raw feature vector of one plant; subclasses choose (load|price, capacity)
    def raw_feature(self, plant: BatteryPlant) -> np.ndarray:
        raise NotImplementedError

    def set_raw_feature(self, plant: BatteryPlant, raw: np.ndarray) -> BatteryPlant:
        raise NotImplementedError

    def initial_estimates(self, agent_id):
        return self.feature_seeds.copy(), self.aux_seeds.copy()

    def measure(self, agent_id):
        p = self.plants[agent_id - 1]
        x, flagged = self.feature_map.normalize(self.raw_feature(p))
        if flagged:
            self.clamped.add(agent_id)
        rate = (p.soc - self._prev_soc[agent_id - 1]) / self.protocol_step
        return x, np.array([p.soc, rate])

    def perturb(self, event: PerturbationEvent) -> None:
        i = event.target - 1
        p = self.plants[i]
        if event.channel == "feature":
            new = event.apply(self.raw_feature(p))
            if new[1] != p.capacity:
                raise ValueError(f"battery {p.id}: capacity is constant during a run")
            self.plants[i] = self.set_raw_feature(p, new)
        else:
            s = float(event.apply(np.array([p.soc, 0.0]))[0])
            self.plants[i] = replace(p, soc=min(max(s, 0.0), 1.0))

    def dispatch(self, plant: BatteryPlant, agent: AgentState) -> float:
        raise NotImplementedError

    def advance(self, round, agents):
        self._prev_soc = [p.soc for p in self.plants]
        plants = []
        for p, a in zip(self.plants, agents):
            p = replace(p, power_out=self.dispatch(p, a))
            plants.append(soc_step(p, self.step_hours))
        self.plants = plants
        self.cumulative_loss += loss_proxy(self.plants) * self.step_hours

    def soc_spread(self, agents) -> list[float | None]:
        M = agents[0].estimates.cluster_count
        out = []
        for j in range(1, M + 1):
            socs = [p.soc for p, a in zip(self.plants, agents) if a.cluster == j]
            out.append(max(socs) - min(socs) if socs else None)
        return out

    def record(self, round, agents):
        return {
            "soc": [p.soc for p in self.plants],
            "power": [p.power_out for p in self.plants],
            "soc_spread": self.soc_spread(agents),
            "loss_proxy": loss_proxy(self.plants),
            "cumulative_loss": self.cumulative_loss,
            "clamped": sorted(self.clamped),
        }

    def summary(self, records):
        body = records[1:]
        return {
            "cumulative_loss": self.cumulative_loss,
            "soc_spread": [r["scenario"]["soc_spread"] for r in body],
            "clamped_agents": sorted(self.clamped),
        }


class LossScenario(MicrogridScenario):
    """Features: normalized (local load, capacity)."""

    def raw_feature(self, plant):
        return np.array([plant.local_load, plant.capacity])

    def set_raw_feature(self, plant, raw):
        return replace(plant, local_load=float(raw[0]))

    def dispatch(self, plant, agent):
        k = agent.cluster
        y_bar, e_bar = self.feature_map.denormalize(agent.estimates.feature[k - 1])
        return balancing_dispatch(plant, (y_bar, e_bar), float(agent.estimates.aux[k - 1, 0]), self.gain)


class VesScenario(MicrogridScenario):
    """Features: normalized (price, capacity); pinned agents carry the utility's seeds."""

    def __init__(self, plants, feature_map, gain, step_hours, protocol_step, feature_seeds,
                 requirement: VesRequirement, external_rate: float = 0.0, aux_seeds=None):
        super().__init__(plants, feature_map, gain, step_hours, protocol_step, feature_seeds, aux_seeds)
        self.requirement = requirement
        self.external_rate = external_rate
        n = len(self.plants)
        bad = [i for i in requirement.pinned_agents if not 1 <= i <= n]
        if bad:
            raise ValueError(f"pinned agents {bad} outside [1, {n}]")

    def raw_feature(self, plant):
        return np.array([plant.price, plant.capacity])

    def set_raw_feature(self, plant, raw):
        return replace(plant, price=float(raw[0]))

    def initial_estimates(self, agent_id):
        if agent_id in self.requirement.pinned_agents:
            return np.array(self.requirement.seed_estimates, dtype=float), self.aux_seeds.copy()
        return self.feature_seeds.copy(), self.aux_seeds.copy()

    def dispatch(self, plant, agent):
        k = agent.cluster
        return balancing_dispatch(plant, agent.estimates.feature[k - 1], float(agent.estimates.aux[k - 1, 0]),
                                  self.gain, external_rate=self.external_rate)

    def cluster_report(self, record: dict) -> list[ClusterOffer]:
        """Offers seen by the utility: estimated averages from a pinned agent, member counts from the trace."""
        pinned = record["agents"][self.requirement.pinned_agents[0] - 1]
        counts: dict[int, int] = {}
        for a in record["agents"]:
            counts[a["k"]] = counts.get(a["k"], 0) + 1
        out = []
        for j, est in enumerate(pinned["feature_est"], start=1):
            price, cap = self.feature_map.denormalize(est)
            out.append(ClusterOffer(j, float(price), float(cap), counts.get(j, 0)))
        return out

    def summary(self, records):
        out = super().summary(records)
        report = self.cluster_report(records[-1])
        sel = ves_select(report, self.requirement)
        final = records[-1]["agents"]
        out["ves"] = {
            "offers": [vars(o) | {"total_capacity": o.total_capacity} for o in report],
            "accepted": list(sel.accepted),
            "offered_capacity": sel.offered_capacity,
            "reason": sel.reason,
            # members of accepted clusters sell at the cluster-average price
            "transactions": [
                {"agent": a["id"], "cluster": a["k"], "price": report[a["k"] - 1].avg_price}
                for a in final if a["k"] in sel.accepted
            ],
        }
        return out


def random_grouping(n_agents: int, sizes: Sequence[int], seed: int) -> tuple[int, ...]:
    """Fixed random partition with the given cluster sizes (1-based labels)."""
    if sum(sizes) != n_agents:
        raise ValueError("group sizes must sum to the agent count")
    labels = np.repeat(np.arange(1, len(sizes) + 1), sizes)
    perm = np.random.Generator(np.random.PCG64(seed)).permutation(labels)
    return tuple(int(v) for v in perm)


__all__ = [
    "BatteryPlant", "FeatureMap", "VesRequirement", "ClusterOffer", "VesSelection",
    "soc_step", "balancing_dispatch", "loss_proxy", "ves_select", "pin_requirements",
    "MicrogridScenario", "LossScenario", "VesScenario", "random_grouping",
]
