"""Command-line interface: run, sweep, prob, trace."""

from __future__ import annotations

import argparse
import sys
from decimal import Decimal, getcontext
from fractions import Fraction
from pathlib import Path

from .config import load_config
from .errors import ParexError
from .harness import run_experiment, sweep
from .membership import ThresholdFamily, group_failure_prob, min_group_size


def _family(name: str) -> ThresholdFamily:
    return ThresholdFamily.ONE_THIRD if name == "third" else ThresholdFamily.MAJORITY


def _sig12(p: Fraction) -> str:
    """Exact probability rendered with 12 significant digits."""
    if p == 0:
        return "0"
    getcontext().prec = 40
    d = Decimal(p.numerator) / Decimal(p.denominator)
    return f"{d:.12g}"


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="parex",
        description="Deterministic simulator for parallel, asynchronous contract execution",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one experiment from a config file")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--seed", type=int, default=None, help="override the config seed")
    p_run.add_argument("--out", required=True, help="output directory")
    p_run.add_argument("--no-plot", action="store_true", help="skip figure rendering")

    p_sweep = sub.add_parser("sweep", help="run a parameter grid")
    p_sweep.add_argument("--config", required=True)
    p_sweep.add_argument(
        "--param",
        required=True,
        help="grid as name=v1,v2,... (e.g. groups=1,2,4,8)",
    )
    p_sweep.add_argument("--out", required=True)
    p_sweep.add_argument("--no-plot", action="store_true")

    p_prob = sub.add_parser("prob", help="exact group-failure probability")
    p_prob.add_argument("--group-size", type=int, required=True)
    p_prob.add_argument("--alpha", required=True, help="adversarial power, e.g. 0.25 or 1/4")
    p_prob.add_argument("--family", choices=("third", "majority"), required=True)
    p_prob.add_argument("--target", default=None, help="also search the minimal group size")

    p_trace = sub.add_parser("trace", help="run a workload from a trace file")
    p_trace.add_argument("--file", required=True)
    p_trace.add_argument("--config", required=True)
    p_trace.add_argument("--out", default="parex-out")
    p_trace.add_argument("--no-plot", action="store_true")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _dispatch(args)
    except ParexError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def _dispatch(args: argparse.Namespace) -> int:
    if args.command == "run":
        config = load_config(args.config)
        if args.seed is not None:
            config.seed = args.seed
        outcome = run_experiment(config, args.out, plot=not args.no_plot)
        print(outcome.metrics.csv_row())
        print(f"artifacts written to {Path(args.out).resolve()}")
        return 0

    if args.command == "sweep":
        config = load_config(args.config)
        name, _, raw_values = args.param.partition("=")
        values = [v for v in raw_values.split(",") if v]
        outcomes = sweep(config, name, values, args.out, plot=not args.no_plot)
        for outcome in outcomes:
            print(outcome.metrics.csv_row())
        print(f"artifacts written to {Path(args.out).resolve()}")
        return 0

    if args.command == "prob":
        family = _family(args.family)
        alpha = Fraction(args.alpha)
        p = group_failure_prob(args.group_size, alpha, family)
        print(f"group_size {args.group_size} alpha {alpha} family {args.family}")
        print(f"failure_probability {_sig12(p)}")
        if args.target is not None:
            n = min_group_size(alpha, family, Fraction(args.target))
            print(f"minimal_group_size {n}")
        return 0

    if args.command == "trace":
        config = load_config(args.config)
        config.workload.kind = "trace"
        config.workload.trace_path = args.file
        config.validate()
        outcome = run_experiment(config, args.out, plot=not args.no_plot)
        print(outcome.metrics.csv_row())
        return 0

    raise AssertionError(f"unhandled command {args.command!r}")


if __name__ == "__main__":
    sys.exit(main())
