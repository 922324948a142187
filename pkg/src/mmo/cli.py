"""Command line interface.

    mmo run --config exp.yaml --out results.csv [--seed N] [--trials N]
            [--parallel N] [--timings]
    mmo validate --config exp.yaml
    mmo oracle --config exp.yaml [--out results.csv]

Exit codes: 0 success, 2 config error, 3 solver non-convergence in strict
mode.  Set MMO_LOG=debug|info|warning to control logging.
"""

import argparse
import logging
import os
import sys

from .exceptions import ConfigError, MmoError
from .harness import _ALGORITHMS, load_config, run_experiment

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NONCONVERGED = 3


def _setup_logging():
    level = os.environ.get("MMO_LOG", "warning").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")


def _add_common(p):
    p.add_argument("--config", required=True, help="experiment YAML file")
    p.add_argument("--out", default=None, help="output CSV path")
    p.add_argument("--seed", type=int, default=None, help="override the seed")
    p.add_argument("--trials", type=int, default=None, help="override trial count")
    p.add_argument("--parallel", type=int, default=1, help="worker processes")
    p.add_argument("--timings", action="store_true",
                   help="write real wall times (breaks byte reproducibility)")
    p.add_argument("--strict", action="store_true",
                   help="exit 3 if any record reports non-convergence")


def main(argv=None):
    _setup_logging()
    parser = argparse.ArgumentParser(prog="mmo", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)
    _add_common(sub.add_parser("run", help="run an experiment"))
    sub.add_parser("validate", help="validate a config").add_argument(
        "--config", required=True)
    _add_common(sub.add_parser("oracle", help="run only the baseline algorithm"))
    args = parser.parse_args(argv)

    try:
        cfg = load_config(args.config)
    except (ConfigError, OSError, KeyError, TypeError, ValueError) as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG

    if args.command == "validate":
        print(f"config ok: scenario={cfg.scenario} trials={cfg.trials} "
              f"snr points={len(cfg.snr_db)} algorithms={cfg.algorithms}")
        return EXIT_OK

    if args.seed is not None:
        cfg.seed = args.seed
    if args.trials is not None:
        cfg.trials = args.trials
    if args.command == "oracle":
        baseline = _ALGORITHMS[cfg.scenario][1]
        cfg.algorithms = [baseline]

    try:
        records = run_experiment(cfg, out_path=args.out, parallel=args.parallel,
                                 timings=args.timings)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except MmoError as err:
        print(f"solver error: {err}", file=sys.stderr)
        return EXIT_NONCONVERGED

    if args.strict and not all(r.converged for r in records):
        print("strict mode: some records did not converge", file=sys.stderr)
        return EXIT_NONCONVERGED
    out = args.out or cfg.output
    print(f"wrote {len(records)} records to {out}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
