#!/usr/bin/env python3
"""Write a small synthetic dataset tree for demos and pipeline smoke runs.

The tree mimics the real archive layout (patientNNN/sNNNN header + signal
pairs with diagnosis comments) and stores the ground-truth R positions in
truth.json at the root.
"""
from __future__ import annotations

import argparse
import json
from pathlib import Path

from gafecg.synthetic import write_toy_corpus


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", required=True, help="directory to create")
    parser.add_argument("--healthy", type=int, default=3, help="healthy subjects")
    parser.add_argument("--mi", type=int, default=3, help="infarction subjects")
    parser.add_argument(
        "--duration", type=float, default=30.0, help="record length in seconds"
    )
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument(
        "--snr-db", type=float, default=24.0, help="white-noise level of the records"
    )
    args = parser.parse_args()

    root = Path(args.out)
    truth = write_toy_corpus(
        root,
        n_healthy=args.healthy,
        n_mi=args.mi,
        duration_s=args.duration,
        seed=args.seed,
        snr_db=args.snr_db,
    )
    beats = sum(len(entry["r_indices"]) for entry in truth.values())
    print(f"wrote {len(truth)} records ({beats} beats) under {root}")
    print(json.dumps({rid: entry["label"] for rid, entry in truth.items()}, indent=2))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
