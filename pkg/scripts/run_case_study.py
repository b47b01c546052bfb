#!/usr/bin/env python3
"""End-to-end budget-planning walkthrough on the synthetic simulator.

Runs the whole pipeline: pilot sampling, noise and hyperparameter
estimation, budget forecast, replication allocation, and a held-out
comparison of the optimal against the uniform allocation.  Outputs land
in --out as CSV files plus ``case_study.json``.
"""

import argparse
import sys

from gpbudget.cli import main

# seed for the canonical run reported in the README table
DEFAULT_SEED = 1

if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[1])
    ap.add_argument("--out", default="results/case_study", help="output directory")
    ap.add_argument("--seed", type=int, default=DEFAULT_SEED)
    ap.add_argument("--config", help="JSON config override file")
    args = ap.parse_args()

    argv = ["casestudy", "--seed", str(args.seed), "--out", args.out]
    if args.config:
        argv += ["--config", args.config]
    sys.exit(main(argv))
