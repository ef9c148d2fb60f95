#!/usr/bin/env python3
"""Run the full detection pipeline over a dataset tree.

Thin wrapper around the ``gafecg`` command line that fills in the
reference experiment settings: all four dataset variants, 10-fold
cross-validation, 50 epochs with early stopping. On a full archive this
is a long CPU run; pass --variant/--epochs to scale it down, or
--split patient for subject-disjoint folds.
"""
from __future__ import annotations

import argparse
from pathlib import Path

from gafecg.cli import main as cli_main


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--dataset-root", required=True, help="archive tree root")
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--variant", default="all", help="ds1..ds4 or all")
    parser.add_argument("--split", default="beat", choices=["beat", "patient"])
    parser.add_argument("--epochs", type=int, default=50)
    parser.add_argument("--patience", type=int, default=5)
    parser.add_argument("--batch-size", type=int, default=8)
    parser.add_argument("--learning-rate", type=float, default=0.001)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument(
        "--inferior-only",
        action="store_true",
        help="keep only infarctions with an inferior localization comment",
    )
    parser.add_argument("--force", action="store_true", help="rerun finished stages")
    args = parser.parse_args()

    argv = [
        "pipeline",
        "--dataset-root", args.dataset_root,
        "--out", args.out,
        "--variant", args.variant,
        "--split", args.split,
        "--epochs", str(args.epochs),
        "--patience", str(args.patience),
        "--batch", str(args.batch_size),
        "--lr", str(args.learning_rate),
        "--seed", str(args.seed),
    ]
    if args.inferior_only:
        argv.append("--inferior-only")
    if args.force:
        argv.append("--force")
    code = cli_main(argv)
    if code == 0:
        report = Path(args.out) / "report" / "report.txt"
        if report.is_file():
            print()
            print(report.read_text(), end="")
    return code


if __name__ == "__main__":
    raise SystemExit(main())
