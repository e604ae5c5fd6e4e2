"""Command-line front end: ``provhids <stage> --config run.json [...]``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import load_config
from .errors import ProvHidsError
from .pipeline import STAGES, run, write_report


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="provhids", description="LLM host-intrusion detection evaluation harness.")
    p.add_argument("command", nargs="?", choices=STAGES, help="stage to run (or use --stage)")
    p.add_argument("--config", type=Path, help="run configuration (JSON)")
    p.add_argument("--stage", choices=STAGES, help="stage to run when no subcommand is given")
    p.add_argument("--dataset", action="append", default=None, help="restrict to this dataset (repeatable)")
    p.add_argument("--seed", type=int, help="root seed (overrides the config)")
    p.add_argument("--mock-fixtures", type=Path, help="replay canned model responses from this directory")
    p.add_argument("--out", type=Path, help="output directory (overrides the config)")
    p.add_argument("--predictions", type=Path, help="eval: score this prediction file instead of the detection")
    p.add_argument("--metrics", type=Path, nargs="+", default=[], help="report: extra metrics CSV files")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command and args.stage and args.command != args.stage:
        parser.error(f"subcommand {args.command!r} conflicts with --stage {args.stage!r}")
    stage = args.command or args.stage
    if stage is None:
        parser.error("give a subcommand or --stage")
    if args.predictions is not None and stage != "eval":
        parser.error("--predictions only applies to eval")
    try:
        if args.config is None:
            # report works without a config when given metrics files directly
            if stage != "report" or not args.metrics:
                parser.error("--config is required")
            write_report(args.out or Path("."), args.metrics)
            return 0
        cfg = load_config(args.config).with_overrides(seed=args.seed, mock_fixtures=args.mock_fixtures,
                                                      output_dir=args.out)
        run(cfg, stage, args.dataset, predictions=args.predictions, extra_metrics=args.metrics)
    except ProvHidsError as exc:
        print(f"provhids: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
