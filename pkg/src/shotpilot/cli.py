"""Command-line interface.

Exit codes: 0 success, 1 usage or scenario-schema error, 2 numeric
failure during simulation (a partial trace is still written).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

from .scenario import (
    ScenarioError,
    SimulationNumericError,
    load_scenario,
    parse_scenario,
    run,
    scenario_defaults,
)
from .trace import render_plots, write_trace

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_NUMERIC = 2


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="shotpilot",
        description="Closed-loop drone cinematography simulator: a thin-lens "
        "camera whose lens state and carrier pose are driven by a "
        "receding-horizon controller against scripted shot directives.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="simulate a scenario and write its trace")
    p_run.add_argument("scenario", type=Path, help="scenario JSON file")
    p_run.add_argument("--out", type=Path, required=True, help="output directory")
    p_run.add_argument("--seed", type=int, default=None, help="override the seed")
    p_run.add_argument("--dt", type=float, default=None, help="override the time step [s]")
    p_run.add_argument(
        "--horizon", type=int, default=None, help="override the prediction horizon"
    )
    p_run.add_argument("--plots", action="store_true", help="also write summary SVGs")
    p_run.add_argument("--quiet", action="store_true", help="suppress progress output")

    p_val = sub.add_parser("validate", help="check a scenario file against the schema")
    p_val.add_argument("scenario", type=Path)

    sub.add_parser("dump-defaults", help="print the defaults filled into scenarios")
    return parser


def _cmd_run(args: argparse.Namespace) -> int:
    document = json.loads(Path(args.scenario).read_text())
    if args.seed is not None:
        document["seed"] = args.seed
    if args.dt is not None:
        document["dt"] = args.dt
    if args.horizon is not None:
        document.setdefault("solver", {})["horizon"] = args.horizon
    scenario = parse_scenario(document)

    args.out.mkdir(parents=True, exist_ok=True)
    t0 = time.time()

    progress = None
    if not args.quiet:
        def progress(i, n, rec):
            if i % 50 == 0 or i == n - 1:
                print(
                    f"t={rec.time:7.2f}s  [{i + 1}/{n}]  cost={rec.total:10.4g}  "
                    f"iters={rec.iterations}",
                    file=sys.stderr,
                )

    code = EXIT_OK
    try:
        records = run(scenario, progress=progress)
    except SimulationNumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        records = exc.records
        code = EXIT_NUMERIC

    trace_path = write_trace(records, args.out / "trace.csv")
    if not args.quiet:
        print(
            f"wrote {len(records)} records to {trace_path} "
            f"({time.time() - t0:.1f}s)",
            file=sys.stderr,
        )
    if args.plots and records:
        for p in render_plots(records, args.out):
            if not args.quiet:
                print(f"wrote {p}", file=sys.stderr)
    return code


def _cmd_validate(args: argparse.Namespace) -> int:
    scenario = load_scenario(args.scenario)
    print(
        f"ok: {args.scenario} "
        f"({len(scenario.targets)} targets, {len(scenario.directives)} sequences, "
        f"{scenario.duration:g}s at dt={scenario.dt:g})"
    )
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE

    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "validate":
            return _cmd_validate(args)
        if args.command == "dump-defaults":
            print(json.dumps(scenario_defaults(), indent=2))
            return EXIT_OK
    except ScenarioError as exc:
        print(f"scenario error at {exc.path}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_USAGE
    except json.JSONDecodeError as exc:
        print(f"invalid JSON in scenario file: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
