"""Command-line entry point: ``fddlab <stage> --config FILE --out DIR [overrides]``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical divergence.
"""

from __future__ import annotations

import argparse
import logging
import sys

from .config import ExperimentConfig, load_config
from .errors import ConfigError, FddLabError
from .experiments import STAGES, run_stage


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fddlab", description="UL-trained CSI recovery experiments")
    parser.add_argument("stage", choices=STAGES)
    parser.add_argument("--config", help="YAML config or a previous run's manifest.yaml")
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--gap", type=int, choices=(120, 240, 480), help="UL-DL gap in MHz")
    parser.add_argument("--eta", type=float, help="feedback keep fraction")
    parser.add_argument("--users", type=int, help="number of users for the rate stage")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors, which matches the config-error code
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config) if args.config else ExperimentConfig()
        cfg = cfg.with_overrides(seed=args.seed, gap=args.gap, eta=args.eta, users=args.users)
        summary = run_stage(args.stage, cfg, args.out)
    except FddLabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (OSError, ValueError) as exc:
        # anything reaching here unclassified is a bad input of some kind
        code = ConfigError.exit_code if isinstance(exc, ValueError) else 3
        print(f"error: {exc}", file=sys.stderr)
        return code
    for key, value in summary.items():
        print(f"{key}: {value}")
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
