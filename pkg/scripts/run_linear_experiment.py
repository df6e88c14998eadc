#!/usr/bin/env python3
"""Run the linear-attacker recovery experiment at standard settings and write
a JSON summary plus a console digest."""

import argparse
import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from atkmap.data_io import ExperimentConfig, write_summary
from atkmap.experiments import run_trials


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--trials", type=int, default=100)
    ap.add_argument("--d", type=int, default=10)
    ap.add_argument("--q", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    ap.add_argument("--output", default="results/linear_per.json")
    args = ap.parse_args()

    cfg = ExperimentConfig(parameterization="linear", d=args.d, q=args.q,
                           trials=args.trials, master_seed=args.seed)
    summary = run_trials("linear", cfg, threads=args.threads)
    os.makedirs(os.path.dirname(args.output) or ".", exist_ok=True)
    write_summary(summary, args.output, "json")
    print(f"linear: median PER {summary.median_per:.2f}, max {summary.max_per:.2f}, "
          f"fraction positive {summary.fraction_positive:.2f} "
          f"({summary.degenerate_trials} degenerate) -> {args.output}")


if __name__ == "__main__":
    main()
