#!/usr/bin/env python3
"""Regenerate the tensor-Matern and Gaussian learning-curve dataset."""

import argparse
import sys

from gpbudget.cli import main

if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="results/figure2", help="output directory")
    ap.add_argument("--seed", type=int, default=2024)
    ap.add_argument("--config", help="JSON config override file")
    args = ap.parse_args()

    argv = ["figure2", "--seed", str(args.seed), "--out", args.out]
    if args.config:
        argv += ["--config", args.config]
    sys.exit(main(argv))
