"""``dynclust`` command line: validate, run, compare, selftest.

Exit codes: 0 success, 2 validation failure, 3 numerical fault.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .agent import ProtocolError
from .config import ConfigError, load
from .consensus import NumericalFault, StructuralError, max_stable_step
from .netsim import (TraceError, compare_traces, read_trace_jsonl, run, write_summary, write_trace_csv,
                     write_trace_jsonl)

EXIT_OK, EXIT_INVALID, EXIT_FAULT = 0, 2, 3


def _overrides(args) -> list[str]:
    out = list(args.set or [])
    if args.seed is not None:
        out.append(f"protocol.seed={args.seed}")
    if args.rounds is not None:
        out.append(f"protocol.rounds={args.rounds}")
    if getattr(args, "out", None) is not None:
        out.append(f"output.dir={json.dumps(str(args.out))}")
    if getattr(args, "format", None) is not None:
        out.append(f'output.format="{args.format}"')
    return out


def _report_invalid(exc: ConfigError) -> int:
    print("invalid config:", file=sys.stderr)
    for p in exc.problems:
        print(f"  - {p}", file=sys.stderr)
    return EXIT_INVALID


def cmd_validate(args) -> int:
    try:
        loaded = load(args.config, _overrides(args))
    except ConfigError as exc:
        return _report_invalid(exc)
    sim = loaded.sim
    print(f"ok: {sim.graph.node_count} agents, {sim.cluster_count} clusters, {sim.rounds} rounds, "
          f"step {sim.step!r} (max_stable_step {max_stable_step(sim.graph)!r})")
    return EXIT_OK


def cmd_run(args) -> int:
    try:
        loaded = load(args.config, _overrides(args))
    except ConfigError as exc:
        return _report_invalid(exc)
    try:
        result = run(loaded.sim, loaded.make_scenario())
    except (NumericalFault, StructuralError, ProtocolError) as exc:
        print(f"numerical fault: {exc}", file=sys.stderr)
        return EXIT_FAULT
    out = Path(loaded.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    if loaded.output_format == "csv":
        trace_path = out / "trace.csv"
        write_trace_csv(result.records, trace_path)
    else:
        trace_path = out / "trace.jsonl"
        write_trace_jsonl(result.records, trace_path)
    result.summary["step"] = loaded.sim.step
    write_summary(result.summary, out / "summary.json")
    s = result.summary
    print(f"wrote {trace_path} and {out / 'summary.json'}: {s['nonempty_clusters']} non-empty clusters, "
          f"sizes {s['cluster_sizes']}, final feature error {s['final_feature_error']!r}")
    return EXIT_OK


def cmd_compare(args) -> int:
    try:
        diff = compare_traces(read_trace_jsonl(args.trace_a), read_trace_jsonl(args.trace_b))
    except (TraceError, OSError, json.JSONDecodeError) as exc:
        print(f"cannot compare: {exc}", file=sys.stderr)
        return EXIT_INVALID
    print(json.dumps(diff, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_selftest(args) -> int:
    from .selftest import run_selftest
    return EXIT_OK if run_selftest(verbose=not args.quiet) else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dynclust", description="Distributed dynamic clustering simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, with_output: bool) -> None:
        p.add_argument("--config", required=True, type=Path)
        p.add_argument("--seed", type=int)
        p.add_argument("--rounds", type=int)
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override any config key")
        if with_output:
            p.add_argument("--out", type=Path)
            p.add_argument("--format", choices=("jsonl", "csv"))

    common(sub.add_parser("validate", help="check a scenario file"), False)
    common(sub.add_parser("run", help="simulate and write trace + summary"), True)
    cmp_ = sub.add_parser("compare", help="diff two JSONL traces")
    cmp_.add_argument("trace_a", type=Path)
    cmp_.add_argument("trace_b", type=Path)
    st = sub.add_parser("selftest", help="run invariant checks on built-in instances")
    st.add_argument("--quiet", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handler = {"validate": cmd_validate, "run": cmd_run, "compare": cmd_compare, "selftest": cmd_selftest}
    return handler[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
