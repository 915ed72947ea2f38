#!/usr/bin/env python3
"""Run every example experiment config under scripts/configs.

Usage:  python3 scripts/run_all.py [--only NAME ...] [--plot]

Heavy configs (kss, lifespan) take minutes on one core; --only selects a
subset by filename stem.  Exit code is the worst per-experiment code.
"""

import argparse
import pathlib
import sys

sys.path.insert(0, str(pathlib.Path(__file__).resolve().parents[1] / "src"))

from aewave.cli import main as aewave_main  # noqa: E402
from aewave.config import load  # noqa: E402

CONFIG_DIR = pathlib.Path(__file__).resolve().parent / "configs"


def main() -> int:
    parser = argparse.ArgumentParser()
    parser.add_argument("--only", nargs="*", default=None)
    parser.add_argument("--plot", action="store_true")
    args = parser.parse_args()
    worst = 0
    for path in sorted(CONFIG_DIR.glob("*.cfg")):
        if args.only and path.stem not in args.only:
            continue
        cfg = load(path)
        argv = [cfg.experiment, "--config", str(path)]
        if args.plot:
            argv.append("--plot")
        print(f"== {path.stem} ({cfg.experiment}) ==", flush=True)
        code = aewave_main(argv)
        print(f"   exit {code}")
        worst = max(worst, code if code != 3 else max(worst, 3))
        if code == 1:
            return 1
    return worst


if __name__ == "__main__":
    raise SystemExit(main())
