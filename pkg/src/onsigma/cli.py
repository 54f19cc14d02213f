"""Command-line entry point.

Subcommands mirror the experiment kinds; common flags:

    onsigma <experiment> --config PATH [--seed U64] [--out DIR]
            [--threads INT] [--override key=value ...]

Exit codes: 0 success, 2 configuration error, 3 numerical abort (the abort
record is still written to the output directory).
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .config import EXPERIMENTS, ConfigError, apply_overrides, parse_config, validate_config
from .runner import RunAborted, run


def build_parser():
    parser = argparse.ArgumentParser(
        prog="onsigma",
        description="Pseudo-spectral Monte Carlo for the O(N) linear sigma model",
    )
    sub = parser.add_subparsers(dest="experiment", metavar="EXPERIMENT")
    for kind in EXPERIMENTS:
        p = sub.add_parser(kind, help=f"run the {kind} experiment")
        p.add_argument("--config", required=True, help="TOML config file")
        p.add_argument("--seed", type=int, default=None, help="master seed override")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--threads", type=int, default=None,
                       help="parallel workers for independent sweep units")
        p.add_argument("--override", action="append", default=[],
                       metavar="KEY=VALUE", help="dotted-path config override")
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.experiment is None:
        parser.print_usage(sys.stderr)
        return 2
    try:
        path = Path(args.config)
        if not path.exists():
            print(f"error: config file not found: {path}", file=sys.stderr)
            print(parser.format_usage(), file=sys.stderr, end="")
            return 2
        cfg = parse_config(path.read_text())
        cfg.experiment = args.experiment
        overrides = list(args.override)
        if args.seed is not None:
            overrides.append(f"seed={args.seed}")
        if args.threads is not None:
            overrides.append(f"threads={args.threads}")
        apply_overrides(cfg, overrides)
        if args.out is not None:
            cfg.out = args.out
        validate_config(cfg)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    try:
        record = run(cfg)
    except RunAborted as e:
        print(f"numerical abort: {e} (record written to {e.out_dir})", file=sys.stderr)
        return 3
    n_files = len(record.get("files", {}))
    print(f"{cfg.experiment}: wrote {n_files} file(s) to {cfg.out or 'runs'}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
