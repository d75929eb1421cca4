"""Round-synchronous simulation of the clustering protocol.

Each round ``t = 1..T``:

1. scripted perturbations for round ``t`` are applied to the scenario;
2. the scenario advances its physical dynamics (using last round's
   cluster results);
3. the messages agents sent at round ``t - 1`` are delivered along every
   edge in both directions (subject to the optional fault model);
4. every agent ticks against an immutable snapshot of the previous round,
   including ``relay_sweeps - 1`` sub-round relay exchanges;
5. one trace record is appended.

Round 0 is the initial snapshot. Everything is deterministic given the
config; the only random source is the fault model's generator.
"""

from __future__ import annotations

import csv
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Iterable, Iterator, Sequence

import numpy as np

from .agent import (AgentParams, AgentState, EstimateMessage, _message, begin_tick, finish_tick, init_agent,
                    provisional_rates, relay_sweep)
from .clustering import HysteresisPolicy, Membership
from .consensus import StateSample, max_stable_step
from .graph import Graph, components, is_connected

TRACE_SCHEMA = "dynclust.trace/1"
RNG_NAME = "numpy.random.PCG64"


class ConfigError(ValueError):
    def __init__(self, problems: Sequence[str]):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class TraceError(ValueError):
    pass


@dataclass(frozen=True)
class PerturbationEvent:
    round: int
    target: int
    channel: str  # "feature" | "aux"
    value: tuple[float, ...] | None = None
    delta: tuple[float, ...] | None = None

    def __post_init__(self) -> None:
        if self.channel not in ("feature", "aux"):
            raise ValueError(f"perturbation channel must be 'feature' or 'aux', got {self.channel!r}")
        if (self.value is None) == (self.delta is None):
            raise ValueError("perturbation needs exactly one of value / delta")

    def apply(self, current: np.ndarray) -> np.ndarray:
        vec = np.asarray(self.value if self.value is not None else self.delta, dtype=float)
        if vec.shape != current.shape:
            raise ValueError(f"perturbation of agent {self.target} has shape {vec.shape}, state has {current.shape}")
        return vec.copy() if self.value is not None else current + vec


@dataclass(frozen=True)
class FaultModel:
    drop_probability: float = 0.0
    fixed_delay_rounds: int = 0


@dataclass(frozen=True)
class SimConfig:
    graph: Graph
    cluster_count: int
    step: float
    rounds: int
    hysteresis: HysteresisPolicy = field(default_factory=HysteresisPolicy)
    seed: int = 0
    perturbations: tuple[PerturbationEvent, ...] = ()
    fault_model: FaultModel | None = None
    relay_sweeps: int = 2
    # Locks every agent into the given 1-based clusters (baseline runs).
    fixed_membership: tuple[int, ...] | None = None
    workers: int = 1
    # move estimate mass with a switching agent (False = no compensation)
    switch_transfer: bool = True

    def problems(self) -> list[str]:
        out = []
        g = self.graph
        if not is_connected(g):
            comps = components(g)
            out.append(f"graph: not connected, components {comps}")
        else:
            bound = max_stable_step(g)
            if not (self.step > 0 and self.step < bound):
                out.append(f"protocol.step: {self.step} must satisfy 0 < step < max_stable_step = {bound!r}")
        if self.cluster_count < 1:
            out.append(f"protocol.clusters: must be >= 1, got {self.cluster_count}")
        if self.rounds < 0:
            out.append(f"protocol.rounds: must be >= 0, got {self.rounds}")
        if self.relay_sweeps < 1:
            out.append(f"protocol.relay_sweeps: must be >= 1, got {self.relay_sweeps}")
        if self.workers < 1:
            out.append(f"workers: must be >= 1, got {self.workers}")
        for n, ev in enumerate(self.perturbations):
            if not 0 <= ev.round <= self.rounds:
                out.append(f"perturbations[{n}].round: {ev.round} outside [0, {self.rounds}]")
            if not 1 <= ev.target <= g.node_count:
                out.append(f"perturbations[{n}].target: {ev.target} outside [1, {g.node_count}]")
        fm = self.fault_model
        if fm is not None:
            if not 0.0 <= fm.drop_probability < 1.0:
                out.append(f"faults.drop_probability: {fm.drop_probability} outside [0, 1)")
            if fm.fixed_delay_rounds < 0:
                out.append(f"faults.fixed_delay_rounds: must be >= 0, got {fm.fixed_delay_rounds}")
        if self.fixed_membership is not None:
            if len(self.fixed_membership) != g.node_count:
                out.append("fixed_membership: needs one cluster per agent")
            elif any(not 1 <= k <= self.cluster_count for k in self.fixed_membership):
                out.append(f"fixed_membership: clusters must lie in [1, {self.cluster_count}]")
        return out

    def validate(self) -> "SimConfig":
        problems = self.problems()
        if problems:
            raise ConfigError(problems)
        return self


class Scenario:
    """Environment hook: supplies states and seeds, runs physical dynamics.

    Subclasses override what they need; agent ids are 1-based.
    """

    feature_dim: int
    aux_dim: int

    def initial_estimates(self, agent_id: int) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    def measure(self, agent_id: int) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    def perturb(self, event: PerturbationEvent) -> None:
        raise NotImplementedError

    def advance(self, round: int, agents: Sequence[AgentState]) -> None:
        pass

    def record(self, round: int, agents: Sequence[AgentState]) -> dict[str, Any]:
        return {}

    def summary(self, records: Sequence[dict]) -> dict[str, Any]:
        return {}


class AbstractScenario(Scenario):
    """Agents with directly specified feature/aux states and shared seeds."""

    def __init__(self, features, aux=None, feature_seeds=None, aux_seeds=None, per_agent_seeds=None):
        self.features = np.array(features, dtype=float, ndmin=2)
        n_agents = self.features.shape[0]
        self.aux = (np.zeros((n_agents, 0)) if aux is None
                    else np.array(aux, dtype=float).reshape(n_agents, -1))
        self.feature_dim = self.features.shape[1]
        self.aux_dim = self.aux.shape[1]
        self.feature_seeds = np.array(feature_seeds, dtype=float, ndmin=2)
        M = self.feature_seeds.shape[0]
        self.aux_seeds = (np.zeros((M, self.aux_dim)) if aux_seeds is None
                          else np.array(aux_seeds, dtype=float).reshape(M, self.aux_dim))
        # optional {agent_id: (feature_seeds, aux_seeds)} overrides
        self.per_agent_seeds = dict(per_agent_seeds or {})

    def initial_estimates(self, agent_id):
        if agent_id in self.per_agent_seeds:
            f, a = self.per_agent_seeds[agent_id]
            return np.array(f, dtype=float, ndmin=2), np.array(a, dtype=float).reshape(len(f), self.aux_dim)
        return self.feature_seeds.copy(), self.aux_seeds.copy()

    def measure(self, agent_id):
        return self.features[agent_id - 1].copy(), self.aux[agent_id - 1].copy()

    def perturb(self, event):
        arr = self.features if event.channel == "feature" else self.aux
        arr[event.target - 1] = event.apply(arr[event.target - 1])


def _cluster_means(states: Sequence[AgentState], M: int, attr: str) -> list[list[float] | None]:
    out = []
    for j in range(1, M + 1):
        vals = [getattr(s.sample, attr) for s in states if s.membership.current_cluster == j]
        out.append(np.mean(vals, axis=0).tolist() if vals else None)
    return out


def _estimate_errors(states: Sequence[AgentState], means: list, attr: str) -> list[float | None]:
    errs = []
    for j, mean in enumerate(means):
        if mean is None:
            errs.append(None)
            continue
        est = np.stack([getattr(s.estimates, attr)[j] for s in states])
        errs.append(float(np.max(np.abs(est - np.asarray(mean)), initial=0.0)))
    return errs


def _max_or_none(vals):
    vals = [v for v in vals if v is not None]
    return max(vals) if vals else None


def snapshot_record(rnd: int, horizon: int, states: Sequence[AgentState], events: int,
                    scenario_fields: dict) -> dict:
    M = states[0].estimates.cluster_count
    f_means = _cluster_means(states, M, "feature")
    a_means = _cluster_means(states, M, "aux")
    f_err = _estimate_errors(states, f_means, "feature")
    a_err = _estimate_errors(states, a_means, "aux")
    return {
        "schema": TRACE_SCHEMA,
        "round": rnd,
        "horizon": horizon,
        "events": events,
        "agents": [
            {
                "id": s.id,
                "x": s.sample.feature.tolist(),
                "z": s.sample.aux.tolist(),
                "k": s.membership.current_cluster,
                "switches": s.membership.switch_count,
                "feature_est": s.estimates.feature.tolist(),
                "aux_est": s.estimates.aux.tolist(),
            }
            for s in states
        ],
        "true_feature_means": f_means,
        "true_aux_means": a_means,
        "cluster_feature_error": f_err,
        "cluster_aux_error": a_err,
        "feature_error": _max_or_none(f_err),
        "aux_error": _max_or_none(a_err),
        "scenario": scenario_fields,
    }


class Simulation:
    """Stepwise engine; ``run`` drives it to the horizon."""

    def __init__(self, config: SimConfig, scenario: Scenario):
        self.config = config.validate()
        self.scenario = scenario
        g = config.graph
        self.rng = np.random.Generator(np.random.PCG64(config.seed))
        self._pool = ThreadPoolExecutor(config.workers) if config.workers > 1 else None
        self._events: dict[int, list[PerturbationEvent]] = {}
        for ev in config.perturbations:
            self._events.setdefault(ev.round, []).append(ev)
        for ev in self._events.get(0, []):
            scenario.perturb(ev)

        locked = config.fixed_membership is not None
        policy = config.hysteresis
        if locked:
            # margin just below 1 with an unreachable dwell never switches
            policy = HysteresisPolicy(0.999999, 2**62)
        states = []
        for i in range(1, g.node_count + 1):
            params = AgentParams(tuple(j + 1 for j in g.adjacent(i - 1)), g.alpha, policy, g.node_count,
                                 config.switch_transfer)
            x, z = scenario.measure(i)
            feat_seeds, aux_seeds = scenario.initial_estimates(i)
            if np.asarray(feat_seeds).shape[0] != config.cluster_count:
                raise ConfigError([f"agent {i}: {np.asarray(feat_seeds).shape[0]} seeds for "
                                   f"{config.cluster_count} clusters"])
            st = init_agent(i, StateSample.initial(x, z), (feat_seeds, aux_seeds), params)
            if locked:
                k = config.fixed_membership[i - 1]
                dist = tuple(0 if j == k else 1 for j in range(1, config.cluster_count + 1))
                st = _replace_membership(st, Membership(i, k), dist)
            states.append(st)
        self.states: list[AgentState] = states
        self.round = 0
        # delivered[(src, dst)] = last message delivered on that directed link
        self._delivered: dict[tuple[int, int], EstimateMessage] = {}
        self._sent: dict[int, list[EstimateMessage]] = {0: [s.outbox for s in states]}
        for s in states:
            for j in s.params.neighbors:
                self._delivered[(s.id, j)] = s.outbox
        self.records: list[dict] = [self._record(0, len(self._events.get(0, [])))]

    def _record(self, rnd: int, events: int) -> dict:
        return snapshot_record(rnd, self.config.rounds, self.states, events,
                               self.scenario.record(rnd, self.states))

    def _map(self, fn, items):
        if self._pool is None:
            return [fn(it) for it in items]
        return list(self._pool.map(fn, items))

    def _deliver(self, rnd: int) -> tuple[list[list[EstimateMessage]], set[tuple[int, int]]]:
        """Inboxes for round ``rnd`` and the set of links that carried a fresh message."""
        fm = self.config.fault_model
        links = [(s.id, j) for s in self.states for j in s.params.neighbors]  # (src, dst), sorted by src
        if fm is None:
            inbox = [[self.states[j - 1].outbox for j in s.params.neighbors] for s in self.states]
            return inbox, set(links)
        delay = fm.fixed_delay_rounds
        src_round = rnd - 1 - delay
        drops = (self.rng.random(len(links)) < fm.drop_probability) if fm.drop_probability > 0 else \
            np.zeros(len(links), dtype=bool)
        fresh_links = set()
        if src_round >= 0:
            sent = self._sent[src_round]
            for (src, dst), dropped in zip(links, drops):
                if not dropped:
                    self._delivered[(src, dst)] = sent[src - 1]
                    if delay == 0:
                        fresh_links.add((src, dst))
        inbox = [[self._delivered[(j, s.id)] for j in s.params.neighbors] for s in self.states]
        return inbox, fresh_links

    def step(self) -> dict:
        cfg = self.config
        rnd = self.round + 1
        if rnd > cfg.rounds:
            raise RuntimeError("simulation already reached its horizon")
        events = self._events.get(rnd, [])
        for ev in events:
            self.scenario.perturb(ev)
        self.scenario.advance(rnd, self.states)
        inboxes, fresh_links = self._deliver(rnd)
        stale_ok = cfg.fault_model is not None
        measured = [self.scenario.measure(s.id) for s in self.states]

        drafts = self._map(lambda a: begin_tick(a[0], a[1], cfg.step, a[2], allow_stale=stale_ok),
                           list(zip(self.states, inboxes, measured)))
        for _ in range(cfg.relay_sweeps - 1):
            rates = [provisional_rates(d) for d in drafts]
            per_agent = [
                {j: rates[j - 1] for j in s.params.neighbors if (j, s.id) in fresh_links}
                for s in self.states
            ]
            drafts = self._map(lambda a: relay_sweep(a[0], a[1]), list(zip(drafts, per_agent)))
        self.states = self._map(lambda d: finish_tick(d, cfg.step), drafts)
        self.round = rnd
        if cfg.fault_model is not None:
            self._sent[rnd] = [s.outbox for s in self.states]
            self._sent.pop(rnd - 1 - cfg.fault_model.fixed_delay_rounds - 1, None)
        rec = self._record(rnd, len(events))
        self.records.append(rec)
        return rec

    def run(self) -> list[dict]:
        try:
            while self.round < self.config.rounds:
                self.step()
        finally:
            self.close()
        return self.records

    def close(self) -> None:
        if self._pool is not None:
            self._pool.shutdown()
            self._pool = None


def _replace_membership(st: AgentState, membership: Membership, dist) -> AgentState:
    return replace(st, membership=membership, member_distance=dist,
                   outbox=_message(st.id, st.round, st.estimates, dist))


@dataclass
class RunResult:
    records: list[dict]
    summary: dict


def run(config: SimConfig, scenario: Scenario, tolerance: float = 1e-3) -> RunResult:
    sim = Simulation(config, scenario)
    records = sim.run()
    summary = summarize(records, tolerance=tolerance)
    summary["scenario"] = scenario.summary(records)
    summary["rng"] = {"generator": RNG_NAME, "seed": config.seed}
    return RunResult(records, summary)


def check_trace(records: Sequence[dict]) -> int:
    """Validate schema and completeness; returns the horizon."""
    if not records:
        raise TraceError("empty trace")
    horizon = records[0].get("horizon")
    for n, rec in enumerate(records):
        if rec.get("schema") != TRACE_SCHEMA:
            raise TraceError(f"record {n}: schema {rec.get('schema')!r}, expected {TRACE_SCHEMA!r}")
        if rec.get("round") != n:
            raise TraceError(f"record {n}: round {rec.get('round')} out of sequence")
    if horizon is None or len(records) != horizon + 1:
        raise TraceError(f"truncated trace: {len(records)} records for horizon {horizon}")
    return horizon


def summarize(records: Sequence[dict], tolerance: float = 1e-3) -> dict:
    horizon = check_trace(records)
    body = records[1:]
    f_err = [r["feature_error"] for r in body]
    a_err = [r["aux_error"] for r in body]
    M = len(records[0]["true_feature_means"])
    per_cluster = {str(j + 1): [r["cluster_feature_error"][j] for r in body] for j in range(M)}
    event_rounds = [r["round"] for r in records if r["events"]]
    last_event = max(event_rounds, default=0)

    settle = None
    for r in reversed(body):
        if r["round"] < last_event:
            break
        ok = all(e is None or e < tolerance for e in (r["feature_error"], r["aux_error"]))
        if not ok:
            break
        settle = r["round"]

    final = records[-1]
    switches = [a["switches"] for a in final["agents"]]
    after = None
    if settle is not None:
        at_settle = records[settle]["agents"]
        after = sum(a["switches"] - b["switches"] for a, b in zip(final["agents"], at_settle))
    sizes = [0] * M
    for a in final["agents"]:
        sizes[a["k"] - 1] += 1
    return {
        "rounds": horizon,
        "tolerance": tolerance,
        "feature_error": f_err,
        "aux_error": a_err,
        "cluster_feature_error": per_cluster if body else {},
        "final_feature_error": final["feature_error"],
        "final_aux_error": final["aux_error"],
        "last_perturbation_round": last_event if event_rounds else None,
        "consensus_round": settle,
        "time_to_consensus": None if settle is None else settle - last_event,
        "total_switches": int(sum(switches)),
        "switches_after_settling": after,
        "final_memberships": [a["k"] for a in final["agents"]],
        "cluster_sizes": sizes,
        "nonempty_clusters": sum(1 for s in sizes if s),
    }


def _dumps(obj) -> str:
    return json.dumps(obj, separators=(",", ":"), allow_nan=False)


def write_trace_jsonl(records: Iterable[dict], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(_dumps(rec))
            fh.write("\n")


def read_trace_jsonl(path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def csv_columns(records: Sequence[dict]) -> list[str]:
    a0 = records[0]["agents"][0]
    n, m, M = len(a0["x"]), len(a0["z"]), len(a0["feature_est"])
    cols = ["round", "agent_id", "k"]
    cols += [f"x{d + 1}" for d in range(n)] + [f"z{d + 1}" for d in range(m)]
    cols += [f"est_x_c{j + 1}_{d + 1}" for j in range(M) for d in range(n)]
    cols += [f"est_z_c{j + 1}_{d + 1}" for j in range(M) for d in range(m)]
    return cols


def write_trace_csv(records: Sequence[dict], path) -> None:
    cols = csv_columns(records)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for rec in records:
            for a in rec["agents"]:
                row = [rec["round"], a["id"], a["k"], *a["x"], *a["z"]]
                row += [v for est in a["feature_est"] for v in est]
                row += [v for est in a["aux_est"] for v in est]
                w.writerow([repr(v) if isinstance(v, float) else v for v in row])


def write_summary(summary: dict, path) -> None:
    Path(path).write_text(json.dumps(summary, indent=2, sort_keys=True, allow_nan=False) + "\n", encoding="utf-8")


def compare_traces(trace_a: Sequence[dict], trace_b: Sequence[dict]) -> dict:
    """Structured diff: first divergence, membership/estimate deltas, metric deltas."""
    for name, tr in (("a", trace_a), ("b", trace_b)):
        if not tr or any(r.get("schema") != TRACE_SCHEMA for r in tr):
            raise TraceError(f"trace {name}: schema mismatch (expected {TRACE_SCHEMA})")
    shape_a = (len(trace_a[0]["agents"]), len(trace_a[0]["true_feature_means"]))
    shape_b = (len(trace_b[0]["agents"]), len(trace_b[0]["true_feature_means"]))
    if shape_a != shape_b:
        raise TraceError(f"schema mismatch: (agents, clusters) {shape_a} vs {shape_b}")

    common = min(len(trace_a), len(trace_b))
    first = None
    membership_diffs = 0
    max_delta = 0.0
    for ra, rb in zip(trace_a[:common], trace_b[:common]):
        # the horizon stamp differs between runs of unequal length; ignore it
        if first is None and {**ra, "horizon": None} != {**rb, "horizon": None}:
            first = ra["round"]
        for aa, ab in zip(ra["agents"], rb["agents"]):
            membership_diffs += aa["k"] != ab["k"]
            for key in ("feature_est", "aux_est"):
                da = np.asarray(aa[key], dtype=float)
                db = np.asarray(ab[key], dtype=float)
                if da.size:
                    max_delta = max(max_delta, float(np.max(np.abs(da - db))))
    length_mismatch = len(trace_a) != len(trace_b)
    if first is None and length_mismatch:
        first = common

    metrics: dict[str, Any] = {}
    fa, fb = trace_a[-1], trace_b[-1]
    for key in ("feature_error", "aux_error"):
        if fa[key] is not None and fb[key] is not None:
            metrics[key] = fb[key] - fa[key]
    sa, sb = fa.get("scenario", {}), fb.get("scenario", {})
    for key in sorted(set(sa) & set(sb)):
        if isinstance(sa[key], (int, float)) and isinstance(sb[key], (int, float)):
            metrics[key] = sb[key] - sa[key]
    metrics["total_switches"] = (sum(a["switches"] for a in fb["agents"])
                                 - sum(a["switches"] for a in fa["agents"]))
    diff = {
        "identical": first is None,
        "length_a": len(trace_a),
        "length_b": len(trace_b),
        "length_mismatch": length_mismatch,
        "first_divergence_round": first,
        "membership_differences": membership_diffs,
        "max_estimate_delta": max_delta,
        "metric_deltas": metrics,
    }
    return diff


def iter_rounds(sim: Simulation) -> Iterator[dict]:
    while sim.round < sim.config.rounds:
        yield sim.step()
