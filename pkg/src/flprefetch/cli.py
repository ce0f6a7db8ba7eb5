"""Command-line experiment runner.

Subcommands:
  run            one simulation from a JSON config
  sweep          repeat the run across values of R / alpha / beta / oc
  compare-naive  adaptive scheduling vs fixed 1-round and R-round prefetch
"""
from __future__ import annotations

import argparse
import sys

from .runner import (
    ConfigError,
    compare_naive,
    load_config,
    run_experiment,
    sweep_experiment,
)


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON config file path")
    parser.add_argument("--seed", type=int, help="override the config seed")
    parser.add_argument("--out", default="out", help="output directory")
    parser.add_argument(
        "--no-plots", action="store_true", help="skip figure rendering"
    )


def _parse_values(text: str) -> list[str]:
    return [v.strip() for v in text.split(",") if v.strip()]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="flprefetch")
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="execute one simulation")
    _add_common(run_p)

    sweep_p = sub.add_parser("sweep", help="sweep one parameter")
    _add_common(sweep_p)
    sweep_p.add_argument(
        "--param", required=True, choices=["R", "alpha", "beta", "oc"]
    )
    sweep_p.add_argument("--values", required=True, help="comma-separated values")
    sweep_p.add_argument("--seeds", help="comma-separated seeds (default: config seed)")

    cmp_p = sub.add_parser("compare-naive", help="compare against fixed-window prefetch")
    _add_common(cmp_p)
    cmp_p.add_argument("--seeds", help="comma-separated seeds (default: config seed)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, {"seed": args.seed})
        plots = not args.no_plots
        if args.command == "run":
            _, summary = run_experiment(cfg, args.out, plots=plots)
            print(
                f"run complete: {summary['rounds_run']} rounds, "
                f"FT={summary['fetch_time_s']:.1f}s TT={summary['total_time_s']:.1f}s "
                f"TV={summary['total_volume_bytes'] / 1e6:.1f}MB -> {args.out}"
            )
        elif args.command == "sweep":
            seeds = [int(s) for s in _parse_values(args.seeds)] if args.seeds else None
            sweep_experiment(
                cfg, args.param, _parse_values(args.values), seeds, args.out, plots
            )
            print(f"sweep complete -> {args.out}/sweep.csv")
        else:
            seeds = [int(s) for s in _parse_values(args.seeds)] if args.seeds else None
            compare_naive(cfg, args.out, seeds, plots)
            print(f"comparison complete -> {args.out}/sweep.csv")
    except (ConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
