"""ttc-train: train tabular truth-table networks and export model files."""

from __future__ import annotations

import argparse
import json
import sys

from .archs import ARCHS
from .datasets import dataset_csv
from .train import DivergenceError, TrainConfig, run_folds


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="ttc-train", description=__doc__)
    parser.add_argument("--dataset", required=True,
                        choices=["adult", "cancer", "diabetes"])
    parser.add_argument("--arch", default=None,
                        help=f"architecture id (default: same as dataset); "
                             f"one of {sorted(ARCHS)}")
    parser.add_argument("--epochs", type=int, default=500)
    parser.add_argument("--lr", type=float, default=3e-3)
    parser.add_argument("--batch-size", type=int, default=256)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--grad-bits", type=int, default=None,
                        help="quantize activation gradients to this many bits")
    parser.add_argument("--data-dir", default="data")
    parser.add_argument("--out", required=True)
    parser.add_argument("--verbose", action="store_true")
    args = parser.parse_args(argv)

    config = TrainConfig(epochs=args.epochs, lr=args.lr, batch_size=args.batch_size,
                         seed=args.seed, grad_bits=args.grad_bits,
                         arch=args.arch or args.dataset)
    try:
        csv_path = dataset_csv(args.dataset, args.data_dir)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    try:
        metrics = run_folds(str(csv_path), args.dataset, config.arch, config,
                            args.out, quiet=not args.verbose)
    except DivergenceError as exc:
        print(f"aborted: {exc}", file=sys.stderr)
        return 3
    print(json.dumps({k: metrics[k] for k in
                      ("dataset", "arch", "mean_circuit_accuracy",
                       "std_circuit_accuracy", "mean_float_accuracy")}, indent=1))
    return 0


if __name__ == "__main__":
    sys.exit(main())
