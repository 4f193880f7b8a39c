#!/usr/bin/env python
"""
Script to write a synthetic labelled feature dataset
"""

import argparse
import sys
from pathlib import Path

import pandas as pd

sys.path.insert(0, str(Path(__file__).parent.parent))  # Add project root to path

from src.training.synthetic import make_separable_dataset
from src.utils.logger import setup_logger
from src.utils.persistence import BINARY_SUFFIX, CSV_SUFFIX, save_features, write_frame


def main() -> int:
    """Write the dataset"""
    parser = argparse.ArgumentParser(description="Write a synthetic labelled feature dataset")
    parser.add_argument("output", type=str, help="Directory for the feature files")
    parser.add_argument("--samples", type=int, default=200, help="Number of sequences (default: 200)")
    parser.add_argument("--frames", type=int, default=12, help="Frames per sequence (default: 12)")
    parser.add_argument("--width", type=int, default=8, help="Feature width (default: 8)")
    parser.add_argument("--classes", type=int, default=2, help="Number of classes (default: 2)")
    parser.add_argument("--noise", type=float, default=0.5, help="Noise standard deviation (default: 0.5)")
    parser.add_argument("--hop", type=float, default=20.0, help="Frame hop in ms (default: 20)")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--csv", action="store_true", help="Write CSV files instead of binary ones")
    parser.add_argument("--subjects", type=int, default=0, help="Also write a subjects.csv with this many subjects")
    args = parser.parse_args()

    logger = setup_logger("INFO")
    dataset = make_separable_dataset(
        samples=args.samples,
        frames=args.frames,
        width=args.width,
        classes=args.classes,
        noise=args.noise,
        hop_ms=args.hop,
        seed=args.seed,
    )

    output = Path(args.output)
    suffix = CSV_SUFFIX if args.csv else BINARY_SUFFIX
    for seq in dataset:
        save_features(seq, output / f"{seq.name}{suffix}")

    labels = pd.DataFrame({"file": [f"{seq.name}{suffix}" for seq in dataset], "label": [seq.label for seq in dataset]})
    if args.subjects > 0:
        labels["subject"] = [f"s{index % args.subjects:03d}" for index in range(len(dataset))]
    write_frame(labels, output.parent / f"{output.name}_labels.csv")

    logger.info(f"Wrote {len(dataset)} sequences to {output}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
