"""Boundary agent toggling around the midpoint of two groups: switches per policy."""

import argparse
import sys

from dynclust.clustering import HysteresisPolicy
from dynclust.consensus import max_stable_step
from dynclust.graph import build_graph, ring_edges
from dynclust.netsim import AbstractScenario, PerturbationEvent, SimConfig, run


def switches(policy, amplitude, period):
    g = build_graph(9, ring_edges(9) + [(1, 5), (3, 7), (2, 8)], 1.0)
    feats = [[0.2], [0.8], [0.22], [0.78], [0.5], [0.18], [0.82], [0.21], [0.79]]
    events = [PerturbationEvent(r, 5, "feature", value=(0.5 + (amplitude if k % 2 == 0 else -amplitude),))
              for k, r in enumerate(range(100, 400, period))]
    events.append(PerturbationEvent(400, 5, "feature", value=(0.5,)))
    cfg = SimConfig(g, 2, 0.5 * max_stable_step(g), 500, policy, perturbations=tuple(events))
    recs = run(cfg, AbstractScenario(feats, None, [[0.2], [0.8]])).records
    return sum(a["switches"] for a in recs[-1]["agents"]) - sum(a["switches"] for a in recs[100]["agents"])


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--amplitude", type=float, default=0.06)
    ap.add_argument("--period", type=int, default=4, help="rounds between toggles")
    args = ap.parse_args()
    for margin, dwell in ((0.0, 0), (0.05, 0), (0.0, 10), (0.05, 10), (0.1, 20)):
        n = switches(HysteresisPolicy(margin, dwell), args.amplitude, args.period)
        print(f"margin {margin:<5} dwell {dwell:<3} -> {n} switches after round 100")
    return 0


if __name__ == "__main__":
    sys.exit(main())
