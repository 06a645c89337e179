"""Command-line entry point: ``drmpg {train,mse-study,oracle-suite}``."""
from __future__ import annotations

import argparse
import logging
import sys

from . import harness

EXPERIMENTS = ("train", "mse-study", "oracle-suite")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="drmpg",
        description="Policy-gradient optimization of distortion risk measures.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in EXPERIMENTS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="YAML experiment configuration")
        p.add_argument("--preset", choices=sorted(harness.PRESETS),
                       help="named configuration applied before --config")
        p.add_argument("--seed", type=int, help="overrides the config seed list with one seed")
        p.add_argument("--out", default=f"runs/{name}", help="output directory")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    overrides = {"experiment": args.command}
    if args.seed is not None:
        if args.seed < 0 or args.seed >= 2**64:
            print("drmpg: --seed must be an unsigned 64-bit integer", file=sys.stderr)
            return 2
        overrides["seeds"] = [args.seed]
    try:
        cfg = harness.load_config(args.config, args.preset, overrides)
        code = harness.run(cfg, args.out)
    except (ValueError, OSError, OverflowError, FloatingPointError) as exc:
        print(f"drmpg: error: {exc}", file=sys.stderr)
        return 2
    if code != 0:
        print(f"drmpg: {args.command} reported failed checks; see {args.out}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
