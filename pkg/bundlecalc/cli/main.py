import argparse
import logging
import sys
from typing import List, Optional

from bundlecalc.common.config import LOG_FORMAT, LOG_LEVEL
from bundlecalc.cli.generator import generate_random
from bundlecalc.cli.runner import EXIT_INVALID, EXIT_OK, format_machine, format_text, run_checks
from bundlecalc.cli.scenario import build_objects, dump_scenario, load_scenario
from bundlecalc.geometry.covariant_calculus import curvature_lines
from bundlecalc.geometry.curvature import curvature, curvature_classical
from bundlecalc.geometry.scalar_field import EvaluationError

logger = logging.getLogger(__name__)


def _point(text: str) -> List[float]:
    try:
        return [float(x) for x in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"Expected comma-separated coordinates, got '{text}'")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bundlecalc", description="Bundle connection calculus checks")
    parser.add_argument("--log-level", default=LOG_LEVEL, help="Logging level (default from LOG_LEVEL)")
    commands = parser.add_subparsers(dest="command", required=True)

    check = commands.add_parser("check", help="Run the checks listed in a scenario file")
    check.add_argument("file")
    check.add_argument(
        "--tol", type=float, default=None,
        help="Tolerance for every check except the finite-difference curvature oracle",
    )
    check.add_argument("--points", type=int, default=None)
    check.add_argument("--seed", type=int, default=None)
    check.add_argument("--format", choices=("text", "machine"), default="text")

    gen = commands.add_parser("gen", help="Print a random scenario")
    gen.add_argument("--seed", type=int, required=True)
    gen.add_argument("--m", type=int, required=True)
    gen.add_argument("--n", type=int, required=True)
    gen.add_argument("--degree", type=int, default=2)

    dump = commands.add_parser("curvature", help="Print the curvature of a connection at a point")
    dump.add_argument("file")
    dump.add_argument("--connection", required=True)
    dump.add_argument("--at", type=_point, required=True)
    return parser


def _check(args) -> int:
    scenario = load_scenario(args.file)
    reports, status = run_checks(scenario, tol=args.tol, points=args.points, seed=args.seed)
    output = format_machine(reports) if args.format == "machine" else format_text(reports)
    sys.stdout.write(output)
    return status


def _gen(args) -> int:
    sys.stdout.write(dump_scenario(generate_random(args.seed, args.m, args.n, args.degree)))
    return EXIT_OK


def _curvature(args) -> int:
    scenario = load_scenario(args.file)
    objects = build_objects(scenario)
    if len(args.at) != scenario.base_dim:
        raise ValueError(f"Point has {len(args.at)} coordinates, base dimension is {scenario.base_dim}")
    if args.connection in objects.connections:
        R = curvature(objects.connections[args.connection])
    elif objects.classical is not None and objects.classical.name == args.connection:
        R = curvature_classical(objects.classical)
    else:
        raise ValueError(f"No connection named '{args.connection}' in {args.file}")
    for line in curvature_lines(R.evaluate(args.at), skip_zero=False):
        sys.stdout.write(line + "\n")
    return EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=args.log_level.upper(),
        format=LOG_FORMAT,
        stream=sys.stderr,
    )

    handlers = {"check": _check, "gen": _gen, "curvature": _curvature}
    try:
        return handlers[args.command](args)
    except EvaluationError as e:
        logger.error(f"Evaluation failed: {e}")
        return EXIT_INVALID
    except ValueError as e:
        logger.error(f"{e}")
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
