"""Cumulative loss proxy: feature-based clustering vs fixed random groupings."""

import argparse
import sys
from pathlib import Path

from dynclust.config import load
from dynclust.netsim import run

ROOT = Path(__file__).resolve().parents[1]


def loss(path, overrides=()):
    loaded = load(path, list(overrides))
    return run(loaded.sim, loaded.make_scenario()).summary["scenario"]["cumulative_loss"]


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", type=Path, default=ROOT / "configs" / "microgrid_loss.toml")
    ap.add_argument("--seeds", type=int, nargs="*")
    args = ap.parse_args()
    seeds = args.seeds or load(args.config).normalized["scenario"]["baseline_seeds"]
    clustered = loss(args.config)
    print(f"feature clustering: {clustered:.4f}")
    worse = 0
    for s in seeds:
        b = loss(args.config, ['scenario.grouping="random"', f"scenario.grouping_seed={s}"])
        worse += clustered < b
        print(f"random grouping seed {s}: {b:.4f}")
    print(f"clustering lower on {worse}/{len(seeds)} seeds")
    return 0 if worse == len(seeds) else 1


if __name__ == "__main__":
    sys.exit(main())
