"""Quick invariant checks on small built-in instances (``dynclust selftest``)."""

from __future__ import annotations

import json

import numpy as np

from .clustering import HysteresisPolicy
from .consensus import max_stable_step
from .graph import build_graph, ring_edges
from .netsim import AbstractScenario, SimConfig, run


def _two_node() -> bool:
    g = build_graph(2, [(1, 2)], 1.0)
    h = 0.5 * max_stable_step(g)
    x = np.array([1.0, 3.0])
    res = run(SimConfig(g, 1, h, 200), AbstractScenario(x[:, None], None, [[0.0]]))
    m, q = x.mean(), 1 - 2 * h
    worst = 0.0
    for rec in res.records[1:]:
        t = rec["round"]
        want = m + (x - m) * q ** (t - 1)
        got = np.array([a["feature_est"][0][0] for a in rec["agents"]])
        worst = max(worst, float(np.max(np.abs(got - want))))
    return worst < 1e-9


def _nine_agent() -> tuple[bool, bool, bool]:
    g = build_graph(9, ring_edges(9) + [(1, 5), (3, 7), (2, 8)], 1.0)
    rng = np.random.Generator(np.random.PCG64(7))
    centers = np.array([[0.15, 0.15], [0.5, 0.85], [0.85, 0.3]])
    feats = centers[[0, 1, 2, 1, 0, 2, 1, 2, 0]] + rng.uniform(-0.05, 0.05, (9, 2))
    aux = rng.random((9, 1))
    seeds = centers + 0.05
    cfg = SimConfig(g, 3, 0.5 * max_stable_step(g), 300)
    res = run(cfg, AbstractScenario(feats, aux, seeds))
    partition = all(1 <= a["k"] <= 3 for r in res.records for a in r["agents"])
    converged = res.summary["final_feature_error"] < 1e-3 and res.summary["final_aux_error"] < 1e-3
    par = run(SimConfig(g, 3, cfg.step, 300, HysteresisPolicy(), workers=3), AbstractScenario(feats, aux, seeds))
    same = [json.dumps(r) for r in res.records] == [json.dumps(r) for r in par.records]
    return partition, converged, same


def run_selftest(verbose: bool = True) -> bool:
    partition, converged, same = _nine_agent()
    checks = {
        "two-node closed form within 1e-9": _two_node(),
        "partition invariant": partition,
        "nine-agent estimates within 1e-3 of member means": converged,
        "identical traces with 1 and 3 workers": same,
    }
    for name, ok in checks.items():
        if verbose:
            print(f"{'PASS' if ok else 'FAIL'}  {name}")
    return all(checks.values())
