"""Command-line entry point.

    pubsdn run --topology topo.json --scenario scen.json [--seed N] [--format json|csv]
               [--trace trace.ndjson] [--output report.json]
    pubsdn run --scenario handover          # a bundled scenario by name
    pubsdn validate --topology topo.json [--scenario scen.json]
    pubsdn list-scenarios

Exit codes: 0 success, 2 validation error, 3 runtime failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .errors import PubSdnError, ValidationError
from .harness import canned_names, emit_report, load_scenario, load_topology, run
from .harness.scenarios import canned_paths

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME = 0, 2, 3


def _resolve(args) -> tuple:
    scen = args.scenario
    topo_path = args.topology
    if scen is not None and not Path(scen).exists() and scen in canned_names():
        canned_topo, scen = canned_paths(scen)
        topo_path = topo_path or str(canned_topo)
        scen = str(scen)
    if topo_path is None:
        raise ValidationError("", "--topology is required unless --scenario names a bundled scenario")
    topo = load_topology(topo_path)
    scenario = load_scenario(scen, topo) if scen is not None else None
    return topo, scenario


def cmd_run(args) -> int:
    from .harness.docs import ScenarioDoc

    topo, scenario = _resolve(args)
    scenario = scenario or ScenarioDoc()
    trace = open(args.trace, "w") if args.trace else None
    try:
        result = run(topo, scenario, seed=args.seed, trace=trace)
    finally:
        if trace:
            trace.close()
    text = emit_report(result.report, args.format)
    if args.output:
        Path(args.output).write_text(text)
    else:
        sys.stdout.write(text)
    if result.failed:
        print(f"run failed: {result.failed}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_validate(args) -> int:
    topo, scenario = _resolve(args)
    n = 0 if scenario is None else len(scenario.actions)
    print(f"ok: {len(topo.switches)} switches, {len(topo.devices)} devices, {n} actions")
    return EXIT_OK


def cmd_list(args) -> int:
    for name in canned_names():
        print(name)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pubsdn", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run a scenario and print the metrics report")
    p.add_argument("--topology")
    p.add_argument("--scenario")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--format", choices=("json", "csv"), default="json")
    p.add_argument("--trace", help="write the dispatched-event log as NDJSON")
    p.add_argument("--output", "-o", help="write the report here instead of stdout")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("validate", help="check topology and scenario files")
    p.add_argument("--topology")
    p.add_argument("--scenario")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("list-scenarios", help="list bundled scenarios")
    p.set_defaults(func=cmd_list)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except PubSdnError as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
