"""Command line interface: ``ttpdf run | preset | plot-data``."""

from __future__ import annotations

import argparse
import logging
import sys
from typing import Optional, Sequence

from .errors import ConfigError
from .experiments import PRESETS, SCALES, load_config, plot_data, run_experiment, run_preset


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ttpdf", description="TT surrogate sampling experiments")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run the study described by an INI file")
    p.add_argument("config", help="path of the configuration file")
    p.add_argument("--output", help="override experiment.output")
    p.add_argument("--seed", type=int, help="override experiment.seed")

    p = sub.add_parser("preset", help="run a predefined study")
    p.add_argument("name", choices=PRESETS)
    p.add_argument("--scale", choices=SCALES, default="desk")
    p.add_argument("--output", default="ttpdf-out", help="root directory of the studies")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("plot-data", help="write error-vs-N and error-vs-time series of a study")
    p.add_argument("study_dir")
    p.add_argument("--output", help="CSV path (default: <study_dir>/plot_data.csv)")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "run":
            cfg = load_config(args.config)
            if args.output:
                cfg.output = args.output
            if args.seed is not None:
                cfg.seed = args.seed
            print(run_experiment(cfg))
        elif args.command == "preset":
            for path in run_preset(args.name, args.scale, args.output, args.seed):
                print(path)
        else:
            print(plot_data(args.study_dir, args.output))
    except ConfigError as exc:
        print(f"ttpdf: error: {exc}", file=sys.stderr)
        return 2
    except KeyboardInterrupt:
        print("ttpdf: interrupted; partial results were written", file=sys.stderr)
        return 130
    return 0


if __name__ == "__main__":
    sys.exit(main())
