"""Command-line experiment runner.

    aewave <experiment> --config PATH [--out DIR] [--plot] [--threads K]
           [--seed S]

The subcommand must match the experiment named in the config file.  Exit
codes: 0 all-pass, 1 error, 2 any fail verdict, 3 inconclusive only.
"""

from __future__ import annotations

import argparse
import logging
import sys

from .config import EXPERIMENTS, ConfigError, load
from .runner import run


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="aewave",
        description="wave-equation estimate experiments on asymptotically "
                    "Euclidean metrics")
    sub = parser.add_subparsers(dest="experiment", required=True)
    for name in EXPERIMENTS:
        p = sub.add_parser(name, help=f"run the {name} experiment")
        p.add_argument("--config", required=True, help="experiment config file")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--plot", action="store_true",
                       help="write SVG plots for fitted scans")
        p.add_argument("--threads", type=int, default=None,
                       help="cap worker threads (advisory)")
        p.add_argument("--seed", type=int, default=None,
                       help="override the config seed")
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    try:
        cfg = load(args.config)
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    if cfg.experiment != args.experiment:
        print(f"error: config names experiment {cfg.experiment!r} but the "
              f"subcommand is {args.experiment!r}", file=sys.stderr)
        return 1
    if args.seed is not None:
        cfg.seed = args.seed
    if args.plot:
        cfg.output["plot"] = True
    if args.threads is not None:
        cfg.threads = args.threads
    try:
        return run(cfg, outdir=args.out)
    except Exception as exc:  # noqa: BLE001 - surface as exit code 1
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
