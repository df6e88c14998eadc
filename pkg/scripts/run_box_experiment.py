#!/usr/bin/env python3
"""Run a box-attacker recovery experiment (softmax-linear or MLP defender).

Uses the digit dataset file when --dataset points at one, otherwise the
synthetic blob substitute. Writes a JSON summary and prints a digest.
"""

import argparse
import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from atkmap.data_io import ExperimentConfig, write_summary
from atkmap.experiments import run_trials


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("family", choices=["logistic", "mlp"])
    ap.add_argument("--trials", type=int, default=100)
    ap.add_argument("--epochs", type=int, default=500)
    ap.add_argument("--dataset", default=None, help="digit record file (16 features + label)")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    ap.add_argument("--output", default=None)
    args = ap.parse_args()

    cfg = ExperimentConfig(
        parameterization=args.family, d=16, q=10, trials=args.trials,
        epochs=args.epochs, grad_mode="unrolled", inner_steps=150,
        inner_step_size=2.0, train_epochs=300, train_lr=0.5,
        hidden_sizes=[32] if args.family == "mlp" else [],
        dataset_path=args.dataset, master_seed=args.seed)
    summary = run_trials(args.family, cfg, threads=args.threads)
    output = args.output or f"results/{args.family}_per.json"
    os.makedirs(os.path.dirname(output) or ".", exist_ok=True)
    write_summary(summary, output, "json")
    print(f"{args.family}: median PER {summary.median_per:.2f}, max {summary.max_per:.2f}, "
          f"fraction positive {summary.fraction_positive:.2f} "
          f"({summary.degenerate_trials} degenerate) -> {output}")


if __name__ == "__main__":
    main()
