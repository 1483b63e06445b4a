#!/usr/bin/env python3


import sys
import os
import argparse
import json
import logging
import math
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple
from datetime import datetime

SRC_PATH = os.path.join(os.path.dirname(os.path.abspath(__file__)), "src")
if SRC_PATH not in sys.path:
    sys.path.insert(0, SRC_PATH)

import numpy as np
import pandas as pd

from core.problem import GraspProblem
from core.stability import quality_curve
from sample_data.sample_problems import get_all_sample_keys, get_sample_problem
from utils.config import ParameterConfig, load_parameters
from utils.errors import (
    NoSurvivingCandidateError,
    ProblemParseError,
    ProblemValidationError,
    RenderError,
    SchemaVersionError,
    ThetaBoundsError,
)
from utils.problem_io import atomic_write_text, load_solution, read_problem
from utils.state_models import EXIT_INTERNAL, EXIT_NO_SURVIVOR, EXIT_SUCCESS, EXIT_VALIDATION
from utils.svg_renderer import RENDER_MODES, render


# ================================
# CONFIGURATION
# ================================

class AppConfig:
    """Application configuration."""

    APP_NAME = "Gripper Co-Design"
    VERSION = "1.0.0"
    SAMPLE_PREFIX = "sample:"
    DEFAULT_OUTPUT = "results"
    LOG_DIR = "logs"


# ================================
# LOGGING SETUP
# ================================

def setup_logging(debug_mode: bool = False, log_dir: str = AppConfig.LOG_DIR) -> logging.Logger:
    """Console plus dated file logging."""
    log_level = logging.DEBUG if debug_mode else logging.INFO

    logs_dir = Path(log_dir)
    logs_dir.mkdir(exist_ok=True)

    log_format = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'

    logging.basicConfig(
        level=log_level,
        format=log_format,
        handlers=[
            logging.StreamHandler(sys.stdout),
            logging.FileHandler(logs_dir / f"app_{datetime.now().strftime('%Y%m%d')}.log")
        ]
    )

    logger = logging.getLogger(__name__)
    logger.info(f"Logging initialized - Level: {log_level}")
    return logger


logger = logging.getLogger(__name__)


# ================================
# PROBLEM RESOLUTION
# ================================

def parse_param_overrides(pairs: Optional[Sequence[str]]) -> Dict[str, Any]:
    """`key=value` pairs; values are read as JSON when possible (numbers, lists), else kept as text."""
    overrides: Dict[str, Any] = {}
    for pair in pairs or []:
        if "=" not in pair:
            raise ProblemValidationError(f"expected key=value, got {pair!r}", "--param")
        key, raw = pair.split("=", 1)
        try:
            overrides[key.strip()] = json.loads(raw)
        except json.JSONDecodeError:
            overrides[key.strip()] = raw
    return overrides


def cli_overrides(args: argparse.Namespace) -> Dict[str, Any]:
    overrides = parse_param_overrides(getattr(args, "param", None))
    for flag, name in (("seed", "seed"), ("starts", "starts"), ("iters", "iterations"), ("workers", "workers")):
        value = getattr(args, flag, None)
        if value is not None:
            overrides[name] = value
    return overrides


def resolve_problem(
    source: str,
    preset: Optional[str] = None,
    overrides: Optional[Dict[str, Any]] = None,
) -> Tuple[GraspProblem, List[str]]:
    """
    Problem from a file path or `sample:<name>`, with parameters layered as
    defaults < preset < environment < file < overrides.
    """
    if source.startswith(AppConfig.SAMPLE_PREFIX):
        key = source[len(AppConfig.SAMPLE_PREFIX):]
        try:
            params = load_parameters(overrides, preset=preset)
        except ValueError as e:
            raise ProblemValidationError(str(e), "parameters") from e
        problem = get_sample_problem(key, params)
        if problem is None:
            raise ProblemValidationError(f"unknown sample {key!r}; available: {get_all_sample_keys()}", "problem")
        return problem, []

    spec, warnings = read_problem(source)
    try:
        problem = spec.to_problem(preset=preset, overrides=overrides)
    except ValueError as e:
        raise ProblemValidationError(str(e), "parameters") from e
    return problem, warnings


# ================================
# SUBCOMMANDS
# ================================

def cmd_solve(args: argparse.Namespace) -> int:
    from workflow import run_design_pipeline

    problem, warnings = resolve_problem(args.problem, args.preset, cli_overrides(args))
    for warning in warnings:
        logger.warning(f"⚠️ {warning}")
    state = run_design_pipeline(problem, args.out, args.problem)
    for path in state.get("written_files") or []:
        print(path)
    return int(state["exit_code"])


def cmd_render(args: argparse.Namespace) -> int:
    solution = load_solution(args.solution)
    modes = RENDER_MODES if args.mode == "all" else (args.mode,)
    out = Path(args.out)
    stem = Path(args.solution).stem
    for mode in modes:
        for name, document in render(solution, mode).items():
            path = atomic_write_text(out / f"{stem}_{name}.svg", document)
            print(path)
    return EXIT_SUCCESS


def cmd_validate(args: argparse.Namespace) -> int:
    spec, warnings = read_problem(args.problem)
    for warning in warnings:
        logger.warning(f"⚠️ {warning}")
    print(json.dumps({
        "name": spec.name,
        "objects": len(spec.objects),
        "contacts": len(spec.contacts),
        "obstacles": len(spec.obstacles),
        "warnings": warnings,
    }, indent=2))
    return EXIT_SUCCESS


def cmd_theta_bounds(args: argparse.Namespace) -> int:
    problem, _ = resolve_problem(args.problem, args.preset, cli_overrides(args))
    rows = [
        {"object": obj.name, "low_deg": math.degrees(low), "high_deg": math.degrees(high)}
        for obj, (low, high) in zip(problem.objects, problem.theta_bounds())
    ]
    print(json.dumps(rows, indent=2))
    return EXIT_SUCCESS


def cmd_quality_curve(args: argparse.Namespace) -> int:
    problem, _ = resolve_problem(args.problem, args.preset, cli_overrides(args))
    if not 0 <= args.object < problem.n_objects:
        raise ProblemValidationError(f"object index {args.object} out of range", "--object")
    thetas = np.radians(np.arange(args.start_deg, args.stop_deg + 0.5 * args.step_deg, args.step_deg))
    table = pd.DataFrame(quality_curve(problem, args.object, thetas))
    if args.out:
        print(atomic_write_text(args.out, table.to_csv(index=False)))
    else:
        print(table.to_csv(index=False), end="")
    return EXIT_SUCCESS


# ================================
# ARGUMENT PARSING
# ================================

def _add_parameter_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument('--preset', choices=sorted(ParameterConfig.PRESETS), help='Experiment preset')
    parser.add_argument('--param', action='append', metavar='KEY=VALUE', help='Override any parameter (repeatable)')
    parser.add_argument('--seed', type=int, help='Random seed')
    parser.add_argument('--starts', type=int, help='Number of multi-start runs')
    parser.add_argument('--iters', type=int, help='Augmented Lagrangian iterations per start')
    parser.add_argument('--workers', type=int, help='Parallel worker processes')


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        description=f"{AppConfig.APP_NAME} - jaw shape and grasp co-optimization for parallel-jaw grippers",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  python run_app.py solve problems/letters.jsonl --preset letters --out results/
  python run_app.py solve sample:two_rectangles --starts 8 --seed 1
  python run_app.py render results/solution_0.jsonl --mode grasp --out figures/
  python run_app.py validate problems/letters.jsonl
  python run_app.py theta-bounds sample:square
  python run_app.py quality-curve sample:square --start-deg -20 --stop-deg 20 --out curve.csv
        """
    )
    parser.add_argument('--debug', action='store_true', help='Enable debug logging')
    parser.add_argument('--version', action='version', version=f"{AppConfig.APP_NAME} {AppConfig.VERSION}")
    subparsers = parser.add_subparsers(dest='command', required=True)

    solve = subparsers.add_parser('solve', help='Run the full co-design pipeline')
    solve.add_argument('problem', help='Problem file or sample:<name>')
    solve.add_argument('--out', default=AppConfig.DEFAULT_OUTPUT, help='Output directory')
    _add_parameter_flags(solve)
    solve.set_defaults(handler=cmd_solve)

    render_cmd = subparsers.add_parser('render', help='Render a solution file to SVG')
    render_cmd.add_argument('solution', help='Solution file')
    render_cmd.add_argument('--mode', choices=list(RENDER_MODES) + ['all'], default='all')
    render_cmd.add_argument('--out', default='.', help='Output directory')
    render_cmd.set_defaults(handler=cmd_render)

    validate = subparsers.add_parser('validate', help='Validate a problem file')
    validate.add_argument('problem', help='Problem file')
    validate.set_defaults(handler=cmd_validate)

    bounds = subparsers.add_parser('theta-bounds', help='Admissible grasp orientations per object')
    bounds.add_argument('problem', help='Problem file or sample:<name>')
    _add_parameter_flags(bounds)
    bounds.set_defaults(handler=cmd_theta_bounds)

    curve = subparsers.add_parser('quality-curve', help='Grasp quality versus grasp orientation')
    curve.add_argument('problem', help='Problem file or sample:<name>')
    curve.add_argument('--object', type=int, default=0, help='Object index')
    curve.add_argument('--start-deg', type=float, default=-20.0)
    curve.add_argument('--stop-deg', type=float, default=20.0)
    curve.add_argument('--step-deg', type=float, default=1.0)
    curve.add_argument('--out', help='CSV file (stdout when omitted)')
    _add_parameter_flags(curve)
    curve.set_defaults(handler=cmd_quality_curve)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Parse arguments, run one subcommand and map the outcome to an exit code."""
    args = build_parser().parse_args(argv)
    setup_logging(args.debug)

    try:
        return args.handler(args)
    except (ProblemParseError, ProblemValidationError, SchemaVersionError, ThetaBoundsError, RenderError) as e:
        logger.error(f"❌ {e}")
        print(json.dumps({"error": type(e).__name__, "message": str(e)}), file=sys.stderr)
        return EXIT_VALIDATION
    except NoSurvivingCandidateError as e:
        logger.error(f"❌ {e}")
        print(json.dumps({"error": type(e).__name__, "message": str(e), "diagnostics": e.diagnostics}), file=sys.stderr)
        return EXIT_NO_SURVIVOR
    except Exception as e:
        logger.exception(f"❌ Internal error: {e}")
        print(json.dumps({"error": type(e).__name__, "message": str(e)}), file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
