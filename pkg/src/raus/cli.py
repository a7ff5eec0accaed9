"""Command line entry point: ``raus <scenario> [--config PATH] [--seed N] [--out PATH] [--set key=value ...]``."""
from __future__ import annotations

import argparse
import sys

from .experiments import SCENARIOS, ConfigError, parse_config, run_scenario, write_csv


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="raus", description="Random-access distributed SGD experiments")
    parser.add_argument("scenario", choices=SCENARIOS)
    parser.add_argument("--config", help="line-oriented 'key = value' file")
    parser.add_argument("--seed", type=int, help="master seed (overrides the config)")
    parser.add_argument("--out", help="CSV output path (default: <scenario>.csv)")
    parser.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override one config key; repeatable")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    overrides = list(args.overrides)
    if args.seed is not None:
        if args.seed < 0 or args.seed >= 2**64:
            print("error: --seed must be an unsigned 64-bit integer", file=sys.stderr)
            return 2
        overrides.append(f"seed={args.seed}")
    if args.out is not None:
        overrides.append(f"out={args.out}")
    try:
        text = ""
        if args.config:
            with open(args.config, encoding="utf-8") as fh:
                text = fh.read()
        spec = parse_config(text, scenario=args.scenario, overrides=overrides)
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    out = spec.out or f"{spec.scenario}.csv"
    try:
        rows = run_scenario(spec)
        write_csv(rows, out, spec)
    except OSError as exc:
        print(f"error: cannot write {out}: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {len(rows)} rows to {out}", file=sys.stderr)
    return 0


if __name__ == "__main__":
    sys.exit(main())
