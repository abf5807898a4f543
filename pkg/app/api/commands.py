"""Command handlers behind the ``hybrid-aif`` entry point.

Each handler takes the parsed arguments and returns the process exit code:
0 when every assertion passed, 1 on an assertion failure, 2 on configuration
or plot errors and 3 on a numeric abort.
"""

import argparse
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import List, Optional

from app.config.dependencies import get_settings
from app.core.scenario_loader import bundled_names, load
from app.core.scenario_runner import run_scenario
from app.schemas.reports import RunSummary
from app.utils.exceptions import ConfigurationError, PlotError, SimulationError
from app.utils.logging import setup_logging
from app.utils.plotting import PLOT_SPECS, render

logger = setup_logging(app_name=__name__)


def _report_error(error: SimulationError) -> int:
    error.log_error(logger)
    print(f"error: {error.message}", file=sys.stderr)
    for violation in getattr(error, "violations", []):
        print(f"  {ConfigurationError.format_violation(violation)}", file=sys.stderr)
    available = getattr(error, "available", None)
    if available:
        print(f"  available: {', '.join(available)}", file=sys.stderr)
    return error.exit_code


def _print_summary(summary: RunSummary) -> None:
    print(f"{summary.scenario}: {summary.status} (seed {summary.seed}, {summary.ticks} ticks, {summary.wall_time:.2f}s)")
    for result in summary.assertions:
        mark = "PASS" if result.passed else "FAIL"
        print(f"  [{mark}] {result.name}: {result.message}")
    if summary.error:
        print(f"  aborted: {summary.error['message']}")
    if "trajectory" in summary.artifacts:
        print(f"  artifacts in {Path(summary.artifacts['trajectory']).parent}")


def _run_one(name: str, args: argparse.Namespace) -> int:
    try:
        summary = run_scenario(name, seed=args.seed, out_dir=args.out, plots=args.plots, overwrite=args.overwrite)
    except SimulationError as e:
        return _report_error(e)
    _print_summary(summary)
    return summary.exit_code


def cmd_run(args: argparse.Namespace) -> int:
    if args.all:
        names = bundled_names()
        with ThreadPoolExecutor(max_workers=get_settings().MAX_WORKERS) as executor:
            codes = list(executor.map(lambda name: _run_one(name, args), names))
        return max(codes, default=0)
    if not args.scenario:
        print("error: give a scenario or --all", file=sys.stderr)
        return ConfigurationError.exit_code
    return _run_one(args.scenario, args)


def cmd_plot(args: argparse.Namespace) -> int:
    specs: List[str] = args.spec or ["trajectories"]
    columns: Optional[List[str]] = args.columns.split(",") if args.columns else None
    try:
        for spec in specs:
            path = render(args.csv, spec, args.out, columns)
            print(path)
    except PlotError as e:
        return _report_error(e)
    return 0


def cmd_validate(args: argparse.Namespace) -> int:
    names = bundled_names() if args.all else [args.scenario]
    code = 0
    for name in names:
        try:
            loaded = load(name)
        except ConfigurationError as e:
            code = max(code, _report_error(e))
            continue
        print(f"{loaded.spec.name}: ok ({loaded.source})")
    return code


def cmd_list(args: argparse.Namespace) -> int:
    for name in bundled_names():
        try:
            description = load(name).spec.description.strip().splitlines()
        except ConfigurationError:
            description = ["(invalid)"]
        print(f"{name:<20} {description[0] if description else ''}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hybrid-aif",
        description="Run hybrid active-inference scenarios and plot their trajectories.",
    )
    parser.add_argument("--log-level", default=None, help="DEBUG, INFO, WARNING or ERROR")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a scenario and write its artifacts")
    run.add_argument("scenario", nargs="?", help="bundled name or path to a YAML file")
    run.add_argument("--all", action="store_true", help="run every bundled scenario")
    run.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    run.add_argument("--out", default=None, help="output directory (default: OUTPUT_DIR)")
    run.add_argument("--plots", action="store_true", help="render the scenario's SVG plots")
    run.add_argument("--overwrite", action="store_true", help="replace existing artifacts")
    run.set_defaults(handler=cmd_run)

    plot = sub.add_parser("plot", help="render SVG plots of a trajectory CSV")
    plot.add_argument("csv")
    plot.add_argument("--spec", action="append", choices=sorted(PLOT_SPECS), help="plot kind, repeatable")
    plot.add_argument("--columns", default=None, help="comma-separated columns replacing the plot kind's default selection")
    plot.add_argument("--out", default=None, help="output directory (default: next to the CSV)")
    plot.set_defaults(handler=cmd_plot)

    validate = sub.add_parser("validate", help="check schema, references and simplex constraints")
    validate.add_argument("scenario", nargs="?")
    validate.add_argument("--all", action="store_true")
    validate.set_defaults(handler=cmd_validate)

    listing = sub.add_parser("list", help="list bundled scenarios")
    listing.set_defaults(handler=cmd_list)
    return parser
