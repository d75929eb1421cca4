"""Run every bundled config and print a one-line summary for each."""

import argparse
import sys
import time
from pathlib import Path

from dynclust.config import load
from dynclust.netsim import run

ROOT = Path(__file__).resolve().parents[1]


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("configs", nargs="*", type=Path, default=sorted((ROOT / "configs").glob("*.toml")))
    args = ap.parse_args()
    for path in args.configs:
        loaded = load(path)
        t0 = time.perf_counter()
        s = run(loaded.sim, loaded.make_scenario()).summary
        extra = ""
        sc = s["scenario"]
        if "cumulative_loss" in sc:
            extra += f", cumulative loss {sc['cumulative_loss']:.3f}"
        if "ves" in sc:
            extra += f", VES accepted {sc['ves']['accepted']} ({sc['ves']['reason']})"
        print(f"{path.name}: {s['rounds']} rounds in {time.perf_counter() - t0:.2f} s, sizes {s['cluster_sizes']}, "
              f"final error {s['final_feature_error']:.2e}, switches {s['total_switches']}{extra}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
