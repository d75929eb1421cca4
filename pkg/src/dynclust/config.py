"""Scenario files: TOML loading, validation, normalization and emission.

Validation never stops at the first problem; every violation is reported
with its ``section.key`` location. A normalized config has every default
filled in, so ``normalize(parse(emit(cfg))) == cfg``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

import numpy as np
import tomli
import tomli_w

from .clustering import HysteresisPolicy
from .consensus import max_stable_step
from .graph import GraphError, build_graph, components, is_connected
from .microgrid import BatteryPlant, FeatureMap, LossScenario, VesRequirement, VesScenario, random_grouping
from .netsim import AbstractScenario, ConfigError, FaultModel, PerturbationEvent, Scenario, SimConfig

SCHEMA_VERSION = 1
STEP_SAFETY = 0.5
SCENARIO_KINDS = ("abstract", "microgrid-loss", "ves")

_TOP = {"schema_version", "graph", "protocol", "scenario", "faults", "perturbation", "output"}
_GRAPH = {"nodes", "edges", "coupling"}
_PROTOCOL = {"clusters", "step", "rounds", "margin", "dwell", "relay_sweeps", "switch_transfer", "seed", "workers",
             "seeds"}
_SEEDS = {"feature", "aux"}
_SCENARIO = {
    "abstract": {"kind", "features", "aux"},
    "microgrid-loss": {"kind", "step_hours", "gain", "grouping", "grouping_seed", "group_sizes",
                       "baseline_seeds", "bounds", "battery"},
    "ves": {"kind", "step_hours", "gain", "external_rate", "bounds", "battery", "ves"},
}
_BOUNDS = {"microgrid-loss": ("load", "capacity"), "ves": ("price", "capacity")}
_BATTERY = {"id", "capacity", "load", "soc", "resistance", "price"}
_VES = {"required_capacity", "max_price", "pinned", "seeds"}
_FAULTS = {"drop_probability", "delay_rounds"}
_PERTURBATION = {"round", "target", "channel", "value", "delta"}
_OUTPUT = {"dir", "format"}


class _Errors(list):
    def add(self, where: str, msg: str) -> None:
        self.append(f"{where}: {msg}")

    def unknown(self, where: str, table: Any, allowed: set) -> None:
        if isinstance(table, dict):
            for key in sorted(set(table) - allowed):
                self.add(f"{where}.{key}" if where else key, "unknown key")


def _is_num(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)


def _is_int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def _matrix(v, rows: int | None, cols: int | None) -> bool:
    if not isinstance(v, list) or (rows is not None and len(v) != rows):
        return False
    return all(isinstance(r, list) and (cols is None or len(r) == cols) and all(_is_num(x) for x in r) for r in v)


def _table(raw: dict, key: str, err: _Errors, where: str = "") -> dict:
    v = raw.get(key, {})
    if not isinstance(v, dict):
        err.add(f"{where}{key}", "must be a table")
        return {}
    return v


def normalize(raw: dict) -> dict:
    """Fill defaults and check every field; raises :class:`ConfigError` with all problems."""
    err = _Errors()
    err.unknown("", raw, _TOP)
    out: dict[str, Any] = {"schema_version": raw.get("schema_version", SCHEMA_VERSION)}
    if out["schema_version"] != SCHEMA_VERSION:
        err.add("schema_version", f"unsupported version {out['schema_version']!r}, expected {SCHEMA_VERSION}")

    # graph
    g = _table(raw, "graph", err)
    err.unknown("graph", g, _GRAPH)
    nodes = g.get("nodes")
    edges = g.get("edges", [])
    coupling = g.get("coupling", 1.0)
    if not _is_int(nodes) or nodes < 1:
        err.add("graph.nodes", f"must be a positive integer, got {nodes!r}")
        nodes = None
    if not (isinstance(edges, list) and all(isinstance(e, list) and len(e) == 2 and all(_is_int(v) for v in e)
                                            for e in edges)):
        err.add("graph.edges", "must be a list of [i, j] integer pairs")
        edges = []
    if not _is_num(coupling) or coupling <= 0:
        err.add("graph.coupling", f"must be a positive number, got {coupling!r}")
    out["graph"] = {"nodes": nodes, "edges": edges, "coupling": coupling}

    graph = None
    if nodes is not None and _is_num(coupling) and coupling > 0:
        try:
            graph = build_graph(nodes, edges, coupling)
        except GraphError as exc:
            err.add("graph.edges", str(exc))
    if graph is not None and not is_connected(graph):
        err.add("graph", f"not connected; components {components(graph)}")
        graph = None

    # protocol
    p = _table(raw, "protocol", err)
    err.unknown("protocol", p, _PROTOCOL)
    proto = {
        "clusters": p.get("clusters"),
        "step": p.get("step", "auto"),
        "rounds": p.get("rounds"),
        "margin": p.get("margin", HysteresisPolicy.margin),
        "dwell": p.get("dwell", HysteresisPolicy.dwell_rounds),
        "relay_sweeps": p.get("relay_sweeps", 2),
        "switch_transfer": p.get("switch_transfer", True),
        "seed": p.get("seed", 0),
        "workers": p.get("workers", 1),
    }
    M = proto["clusters"]
    if not _is_int(M) or M < 1:
        err.add("protocol.clusters", f"must be a positive integer, got {M!r}")
        M = None
    if not _is_int(proto["rounds"]) or proto["rounds"] < 0:
        err.add("protocol.rounds", f"must be a non-negative integer, got {proto['rounds']!r}")
    step = proto["step"]
    if step != "auto" and not (_is_num(step) and step > 0):
        err.add("protocol.step", f'must be "auto" or a positive number, got {step!r}')
    elif graph is not None and step != "auto":
        bound = max_stable_step(graph)
        if step >= bound:
            err.add("protocol.step", f"{step} must be below max_stable_step = {bound!r}")
    if not (_is_num(proto["margin"]) and 0 <= proto["margin"] < 1):
        err.add("protocol.margin", f"must lie in [0, 1), got {proto['margin']!r}")
    if not (_is_int(proto["dwell"]) and proto["dwell"] >= 0):
        err.add("protocol.dwell", f"must be a non-negative integer, got {proto['dwell']!r}")
    for key, lo in (("relay_sweeps", 1), ("workers", 1), ("seed", 0)):
        if not (_is_int(proto[key]) and proto[key] >= lo):
            err.add(f"protocol.{key}", f"must be an integer >= {lo}, got {proto[key]!r}")
    if not isinstance(proto["switch_transfer"], bool):
        err.add("protocol.switch_transfer", f"must be true or false, got {proto['switch_transfer']!r}")

    seeds = _table(p, "seeds", err, "protocol.")
    err.unknown("protocol.seeds", seeds, _SEEDS)
    proto["seeds"] = {"feature": seeds.get("feature")}
    if "aux" in seeds:
        proto["seeds"]["aux"] = seeds["aux"]
    out["protocol"] = proto

    # scenario
    s = _table(raw, "scenario", err)
    kind = s.get("kind", "abstract")
    if kind not in SCENARIO_KINDS:
        err.add("scenario.kind", f"must be one of {', '.join(SCENARIO_KINDS)}, got {kind!r}")
        out["scenario"] = dict(s)
        feat_dim = aux_dim = None
    else:
        err.unknown("scenario", s, _SCENARIO[kind])
        out["scenario"], feat_dim, aux_dim = _normalize_scenario(kind, s, nodes, M, err)

    fs = proto["seeds"]["feature"]
    if not _matrix(fs, M, feat_dim):
        err.add("protocol.seeds.feature", f"needs {M} rows of {feat_dim if feat_dim is not None else 'n'} numbers")
    if "aux" in proto["seeds"] and not _matrix(proto["seeds"]["aux"], M, aux_dim):
        err.add("protocol.seeds.aux", f"needs {M} rows of {aux_dim if aux_dim is not None else 'm'} numbers")

    # faults
    if "faults" in raw:
        f = _table(raw, "faults", err)
        err.unknown("faults", f, _FAULTS)
        faults = {"drop_probability": f.get("drop_probability", 0.0), "delay_rounds": f.get("delay_rounds", 0)}
        if not (_is_num(faults["drop_probability"]) and 0 <= faults["drop_probability"] < 1):
            err.add("faults.drop_probability", f"must lie in [0, 1), got {faults['drop_probability']!r}")
        if not (_is_int(faults["delay_rounds"]) and faults["delay_rounds"] >= 0):
            err.add("faults.delay_rounds", f"must be a non-negative integer, got {faults['delay_rounds']!r}")
        out["faults"] = faults

    # perturbations
    perts = raw.get("perturbation", [])
    if not isinstance(perts, list):
        err.add("perturbation", "must be an array of tables")
        perts = []
    norm_perts = []
    for n, ev in enumerate(perts):
        where = f"perturbation[{n}]"
        if not isinstance(ev, dict):
            err.add(where, "must be a table")
            continue
        err.unknown(where, ev, _PERTURBATION)
        rnd, tgt, ch = ev.get("round"), ev.get("target"), ev.get("channel")
        if not _is_int(rnd) or rnd < 0 or (_is_int(proto["rounds"]) and rnd > proto["rounds"]):
            err.add(f"{where}.round", f"must be an integer in [0, rounds], got {rnd!r}")
        if not _is_int(tgt) or (nodes is not None and not 1 <= tgt <= nodes):
            err.add(f"{where}.target", f"must be a node id in [1, {nodes}], got {tgt!r}")
        if ch not in ("feature", "aux"):
            err.add(f"{where}.channel", f'must be "feature" or "aux", got {ch!r}')
        if ("value" in ev) == ("delta" in ev):
            err.add(where, "needs exactly one of value / delta")
        key = "value" if "value" in ev else "delta"
        dim = feat_dim if ch == "feature" else aux_dim
        vec = ev.get(key)
        if vec is not None and not (isinstance(vec, list) and all(_is_num(v) for v in vec)
                                    and (dim is None or len(vec) == dim)):
            err.add(f"{where}.{key}", f"must be a list of {dim} numbers")
        norm_perts.append({"round": rnd, "target": tgt, "channel": ch, key: vec})
    out["perturbation"] = norm_perts

    o = _table(raw, "output", err)
    err.unknown("output", o, _OUTPUT)
    output = {"dir": o.get("dir", "out"), "format": o.get("format", "jsonl")}
    if not isinstance(output["dir"], str):
        err.add("output.dir", "must be a string")
    if output["format"] not in ("jsonl", "csv"):
        err.add("output.format", f'must be "jsonl" or "csv", got {output["format"]!r}')
    out["output"] = output

    if err:
        raise ConfigError(err)
    return out


def _normalize_scenario(kind: str, s: dict, nodes, M, err: _Errors):
    if kind == "abstract":
        feats, aux = s.get("features"), s.get("aux")
        if not _matrix(feats, nodes, None) or not feats or len({len(r) for r in feats}) != 1 or not feats[0]:
            err.add("scenario.features", f"needs {nodes} rows of equal, non-zero length")
            n = None
        else:
            n = len(feats[0])
        out = {"kind": kind, "features": feats}
        m = 0
        if aux is not None:
            if not _matrix(aux, nodes, None) or (aux and len({len(r) for r in aux}) != 1):
                err.add("scenario.aux", f"needs {nodes} rows of equal length")
            else:
                m = len(aux[0]) if aux else 0
            out["aux"] = aux
        return out, n, m

    out = {"kind": kind, "step_hours": s.get("step_hours"), "gain": s.get("gain")}
    for key in ("step_hours", "gain"):
        if not (_is_num(out[key]) and out[key] > 0):
            err.add(f"scenario.{key}", f"must be a positive number, got {out[key]!r}")

    names = _BOUNDS[kind]
    b = _table(s, "bounds", err, "scenario.")
    err.unknown("scenario.bounds", b, set(names))
    bounds = {}
    for name in names:
        v = b.get(name)
        if not (isinstance(v, list) and len(v) == 2 and all(_is_num(x) for x in v) and v[1] > v[0]):
            err.add(f"scenario.bounds.{name}", f"must be [min, max] with max > min, got {v!r}")
        bounds[name] = v
    out["bounds"] = bounds

    bats = s.get("battery", [])
    if not isinstance(bats, list):
        err.add("scenario.battery", "must be an array of tables")
        bats = []
    norm_bats = []
    for n, bat in enumerate(bats):
        where = f"scenario.battery[{n}]"
        if not isinstance(bat, dict):
            err.add(where, "must be a table")
            continue
        err.unknown(where, bat, _BATTERY)
        nb = {"id": bat.get("id"), "capacity": bat.get("capacity"), "load": bat.get("load", 0.0),
              "soc": bat.get("soc"), "resistance": bat.get("resistance", 1.0), "price": bat.get("price", 0.0)}
        if nb["id"] != n + 1:
            err.add(f"{where}.id", f"expected {n + 1} (batteries listed in id order), got {nb['id']!r}")
        checks = {"capacity": lambda v: v > 0, "load": lambda v: v >= 0, "soc": lambda v: 0 <= v <= 1,
                  "resistance": lambda v: v > 0, "price": lambda v: v >= 0}
        for key, ok in checks.items():
            if not (_is_num(nb[key]) and ok(nb[key])):
                err.add(f"{where}.{key}", f"out of range: {nb[key]!r}")
        norm_bats.append(nb)
    if nodes is not None and len(norm_bats) != nodes:
        err.add("scenario.battery", f"{len(norm_bats)} batteries for {nodes} nodes")
    out["battery"] = norm_bats

    if kind == "microgrid-loss":
        out["grouping"] = s.get("grouping", "feature")
        out["grouping_seed"] = s.get("grouping_seed", 0)
        out["baseline_seeds"] = s.get("baseline_seeds", [])
        sizes = s.get("group_sizes")
        if out["grouping"] not in ("feature", "random"):
            err.add("scenario.grouping", f'must be "feature" or "random", got {out["grouping"]!r}')
        if not (_is_int(out["grouping_seed"]) and out["grouping_seed"] >= 0):
            err.add("scenario.grouping_seed", "must be a non-negative integer")
        if not (isinstance(out["baseline_seeds"], list) and all(_is_int(v) and v >= 0 for v in out["baseline_seeds"])):
            err.add("scenario.baseline_seeds", "must be a list of non-negative integers")
        if sizes is not None:
            if not (isinstance(sizes, list) and all(_is_int(v) and v >= 0 for v in sizes)
                    and (M is None or len(sizes) == M) and (nodes is None or sum(sizes) == nodes)):
                err.add("scenario.group_sizes", f"needs {M} non-negative integers summing to {nodes}")
            out["group_sizes"] = sizes
    else:
        out["external_rate"] = s.get("external_rate", 0.0)
        if not _is_num(out["external_rate"]):
            err.add("scenario.external_rate", "must be a number")
        v = _table(s, "ves", err, "scenario.")
        err.unknown("scenario.ves", v, _VES)
        ves = {k: v.get(k) for k in ("required_capacity", "max_price", "pinned", "seeds")}
        for key in ("required_capacity", "max_price"):
            if not (_is_num(ves[key]) and ves[key] >= 0):
                err.add(f"scenario.ves.{key}", f"must be a non-negative number, got {ves[key]!r}")
        pinned = ves["pinned"]
        if not (isinstance(pinned, list) and pinned and all(_is_int(i) for i in pinned)):
            err.add("scenario.ves.pinned", "must be a non-empty list of node ids")
        elif nodes is not None and any(not 1 <= i <= nodes for i in pinned):
            err.add("scenario.ves.pinned", f"node ids must lie in [1, {nodes}]")
        if not _matrix(ves["seeds"], M, 2):
            err.add("scenario.ves.seeds", f"needs {M} rows of (price, capacity)")
        out["ves"] = ves
    return out, 2, 2


@dataclass
class LoadedConfig:
    normalized: dict
    sim: SimConfig
    make_scenario: Callable[[], Scenario]
    output_dir: str
    output_format: str


def build(cfg: dict) -> LoadedConfig:
    """Turn a normalized config into runnable objects."""
    g = cfg["graph"]
    graph = build_graph(g["nodes"], g["edges"], g["coupling"])
    p = cfg["protocol"]
    step = STEP_SAFETY * max_stable_step(graph) if p["step"] == "auto" else float(p["step"])
    if math.isinf(step):
        raise ConfigError(['protocol.step: "auto" needs at least one edge'])
    faults = cfg.get("faults")
    fm = FaultModel(faults["drop_probability"], faults["delay_rounds"]) if faults else None
    perts = tuple(PerturbationEvent(ev["round"], ev["target"], ev["channel"],
                                    tuple(ev["value"]) if "value" in ev else None,
                                    tuple(ev["delta"]) if "delta" in ev else None)
                  for ev in cfg["perturbation"])
    s = cfg["scenario"]
    fixed = None
    if s["kind"] == "microgrid-loss" and s["grouping"] == "random":
        sizes = s.get("group_sizes") or _even_sizes(g["nodes"], p["clusters"])
        fixed = random_grouping(g["nodes"], sizes, s["grouping_seed"])
    sim = SimConfig(graph, p["clusters"], step, p["rounds"], HysteresisPolicy(p["margin"], p["dwell"]),
                    p["seed"], perts, fm, p["relay_sweeps"], fixed, p["workers"], p["switch_transfer"])
    problems = sim.problems()
    if problems:
        raise ConfigError(problems)
    return LoadedConfig(cfg, sim, lambda: _scenario(cfg, step), cfg["output"]["dir"], cfg["output"]["format"])


def _even_sizes(n: int, M: int) -> list[int]:
    return [n // M + (1 if j < n % M else 0) for j in range(M)]


def _scenario(cfg: dict, step: float) -> Scenario:
    s = cfg["scenario"]
    seeds = cfg["protocol"]["seeds"]
    aux_seeds = seeds.get("aux")
    if s["kind"] == "abstract":
        return AbstractScenario(s["features"], s.get("aux"), seeds["feature"], aux_seeds)
    names = _BOUNDS[s["kind"]]
    fmap = FeatureMap(tuple(tuple(s["bounds"][k]) for k in names))
    plants = [BatteryPlant(b["id"], b["capacity"], b["load"], b["soc"], 0.0, b["price"], b["resistance"])
              for b in s["battery"]]
    # seeds are written in raw units; the protocol runs on normalized features
    feat_seeds = np.array([fmap.normalize(row)[0] for row in seeds["feature"]])
    if s["kind"] == "microgrid-loss":
        return LossScenario(plants, fmap, s["gain"], s["step_hours"], step, feat_seeds, aux_seeds)
    v = s["ves"]
    req = VesRequirement(v["required_capacity"], v["max_price"], tuple(v["pinned"]),
                         tuple(tuple(fmap.normalize(row)[0].tolist()) for row in v["seeds"]))
    return VesScenario(plants, fmap, s["gain"], s["step_hours"], step, feat_seeds, req,
                       s["external_rate"], aux_seeds)


def parse(text: str) -> dict:
    try:
        return tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError([f"syntax: {exc}"]) from exc


def set_override(raw: dict, assignment: str) -> None:
    """Apply ``section.key=value`` (value in TOML syntax, bare words taken as strings)."""
    path, sep, text = assignment.partition("=")
    if not sep or not path.strip():
        raise ConfigError([f"override {assignment!r}: expected key=value"])
    try:
        value = tomli.loads(f"v = {text.strip()}")["v"]
    except tomli.TOMLDecodeError:
        value = text.strip()
    keys = path.strip().split(".")
    node = raw
    for key in keys[:-1]:
        node = node.setdefault(key, {})
        if not isinstance(node, dict):
            raise ConfigError([f"override {assignment!r}: {key} is not a table"])
    node[keys[-1]] = value


def load(path, overrides: list[str] = ()) -> LoadedConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError([f"{path}: {exc.strerror}"]) from exc
    raw = parse(text)
    for ov in overrides:
        set_override(raw, ov)
    return build(normalize(raw))


def emit(cfg: dict) -> str:
    """TOML text for a normalized config (``None`` entries are dropped)."""
    def strip(v):
        if isinstance(v, dict):
            return {k: strip(x) for k, x in v.items() if x is not None}
        if isinstance(v, list):
            return [strip(x) for x in v]
        return v
    return tomli_w.dumps(strip(cfg))
