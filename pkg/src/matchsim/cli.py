"""Command line entry point: ``matchsim <kind> --config <file> [--out DIR] [--seed N] [--threads K]``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .errors import ConfigError, MatchsimError
from .experiments import KINDS, load_config, run


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="matchsim", description=__doc__.split(":")[0])
    parser.add_argument("kind", choices=KINDS)
    parser.add_argument("--config", required=True, type=Path, help="YAML or JSON experiment config")
    parser.add_argument("--out", help="output directory (default: config value or ./results)")
    parser.add_argument("--seed", type=int, help="override the config seed")
    parser.add_argument("--threads", type=int, help="worker threads for replications")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.seed is not None and not 0 <= args.seed < 2**64:
        print("error: seed must be an unsigned 64-bit integer", file=sys.stderr)
        return 2
    try:
        text = args.config.read_text(encoding="utf-8")
    except OSError as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return 2
    try:
        cfg = load_config(text, args.kind, seed=args.seed, out=args.out, threads=args.threads)
    except ConfigError as exc:
        for msg in exc.errors:
            print(f"config error: {msg}", file=sys.stderr)
        return 2
    try:
        result = run(cfg)
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 3
    except MatchsimError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    print(json.dumps({"status": result.status, "files": [str(p) for p in result.files]}, indent=2))
    return result.status


if __name__ == "__main__":
    sys.exit(main())
