"""Shared driver for the Monte Carlo table scripts."""

import argparse
import logging
import sys

from drdid.cli import _setup_logging, cmd_simulate
from drdid.config import RunConfig

FULL_N = [200, 500, 1000]
FULL_P = [10, 50, 500, 1000]


def run(family: str, default_out: str, argv=None) -> int:
    ap = argparse.ArgumentParser(description=f"Monte Carlo table for {family}")
    ap.add_argument("--n", type=int, nargs="+", default=[500])
    ap.add_argument("--p", type=int, nargs="+", default=[10, 50])
    ap.add_argument("--full", action="store_true", help="use the full n x p grid (slow)")
    ap.add_argument("--reps", type=int, default=200)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--rho", type=float, default=0.5)
    ap.add_argument("--out", default=default_out)
    args = ap.parse_args(argv)
    _setup_logging(False)
    cfg = RunConfig()
    cfg.run.seed, cfg.run.threads, cfg.run.out = args.seed, args.threads, args.out
    cfg.dgp.family, cfg.dgp.rho = family, args.rho
    cfg.simulate.n = FULL_N if args.full else args.n
    cfg.simulate.p = FULL_P if args.full else args.p
    cfg.simulate.estimators = ["drdid", "semidid"]
    cfg.simulate.reps = args.reps
    code = cmd_simulate(cfg)
    if code == 0:
        with open(f"{args.out}/table.txt", encoding="utf-8") as fh:
            sys.stdout.writelines(line for line in fh if not line.startswith("#"))
    logging.shutdown()
    return code
