"""Command-line entry point.

    tailcast {prepare-text|fit-ctm|backtest|importance|all} --config FILE [--threads N] [--seed N] [--out DIR]
    tailcast validate --config FILE
    tailcast synth --out DIR [--seed N]

Exit codes: 0 success, 2 invalid configuration or input, 3 numerical failure,
4 missing prerequisite artifact.
"""
from __future__ import annotations

import argparse
import logging
import sys

from .config import ConfigError, load_config
from .errors import MissingPrerequisiteError, NumericalError
from .ingest import PanelParseError
from .pipeline import STAGES, run_all, run_stage
from .synthetic import write_synthetic_dataset

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL, EXIT_MISSING = 0, 2, 3, 4

log = logging.getLogger("tailcast")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tailcast", description="Quantile nowcasts and forecasts from macro and text predictors.")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    sub = parser.add_subparsers(dest="command", required=True)
    for verb in (*STAGES, "all"):
        p = sub.add_parser(verb, help=f"run the {verb} stage" if verb != "all" else "run every stage in order")
        p.add_argument("--config", required=True, help="YAML experiment configuration")
        p.add_argument("--threads", type=int, default=None, help="worker processes for the backtest")
        p.add_argument("--seed", type=int, default=None, help="override the configured seed")
        p.add_argument("--out", default=None, help="override the output directory")
    p = sub.add_parser("validate", help="check a configuration and print it normalized")
    p.add_argument("--config", required=True)
    p = sub.add_parser("synth", help="write the bundled synthetic dataset and a config")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--months", type=int, default=240)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        if args.command == "synth":
            write_synthetic_dataset(args.out, seed=args.seed, n_months=args.months)
            print(f"wrote synthetic dataset to {args.out}")
            return EXIT_OK
        cfg = load_config(args.config)
        if args.command == "validate":
            print(cfg.to_json())
            return EXIT_OK
        if args.threads is not None and args.threads < 1:
            raise ConfigError(["--threads must be at least 1"])
        cfg = cfg.with_overrides(seed=args.seed, output_dir=args.out, threads=args.threads)
        progress = log.info if args.verbose else None
        produced = run_all(cfg, progress) if args.command == "all" else run_stage(args.command, cfg, progress)
        for path in produced:
            print(path)
        return EXIT_OK
    except ConfigError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_INVALID
    except PanelParseError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except MissingPrerequisiteError as exc:
        print(f"missing prerequisite: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
