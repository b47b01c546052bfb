#!/usr/bin/env python3
"""Regenerate the fractional-Brownian learning-curve dataset.

Produces one CSV per Hurst value (empirical IMSE against 1/tau with
standard errors and the fitted theory curve) plus a JSON report with
the fitted log-log slopes.  The defaults reproduce the benchmark run;
pass --config with a JSON file to shrink or reshape the grid (same
schema as ``gpbudget figure1``).
"""

import argparse
import sys

from gpbudget.cli import main

DEFAULT_SEED = 101


def parse_args():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[1])
    ap.add_argument("--out", default="results/figure1", help="output directory")
    ap.add_argument("--seed", type=int, default=DEFAULT_SEED)
    ap.add_argument("--config", help="JSON config override file")
    return ap.parse_args()


if __name__ == "__main__":
    args = parse_args()
    argv = ["figure1", "--seed", str(args.seed), "--out", args.out]
    if args.config:
        argv += ["--config", args.config]
    sys.exit(main(argv))
