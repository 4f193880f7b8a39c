#!/usr/bin/env python
"""
hierform - Main Entry Point
"""

import argparse
import sys
from typing import List, Optional

from src.cli.commands import GRADCHECK_DEFAULTS, run_command
from src.hierarchy.params import MODEL_KINDS, SPEECHFORMER
from src.utils.config import DATASET_PRESETS, get_log_level
from src.utils.logger import setup_logger


def _add_config_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=str, default=None, help="Flat key=value config file")
    parser.add_argument(
        "--set", action="append", default=[], metavar="KEY=VALUE", help="Override one config value (repeatable)"
    )
    parser.add_argument("--preset", choices=sorted(DATASET_PRESETS), default=None, help="Dataset preset")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hierform", description="Hierarchical windowed-attention toolkit")
    parser.add_argument("--log-level", type=str, default=None, help="Logging level (default: $HIERFORM_LOG_LEVEL or WARNING)")
    parser.add_argument("--log-file", type=str, default=None, help="Also log to this file")
    commands = parser.add_subparsers(dest="command", required=True)

    plan = commands.add_parser("plan", help="Print the stage plan")
    _add_config_options(plan)
    plan.add_argument("--hop", type=float, default=None, help="Frame hop in ms (default: config hop_ms)")
    plan.add_argument("--frames", "-T", type=int, default=None, help="Input frames (default: config max_len)")

    infer = commands.add_parser("infer", help="Classify feature files")
    _add_config_options(infer)
    infer.add_argument("files", nargs="+", help="Feature files (.hfm or .csv)")
    infer.add_argument("--model", choices=MODEL_KINDS, default=SPEECHFORMER)
    infer.add_argument("--weights", type=str, default=None, help="Weights archive written by train")
    infer.add_argument("--workers", type=int, default=1, help="Files evaluated concurrently")
    infer.add_argument("--output", type=str, default=None, help="Also write predictions to this CSV")
    infer.add_argument("--subjects", type=str, default=None, help="CSV with columns file,subject; adds a subject column")
    infer.add_argument("--record-attention", type=str, default=None, metavar="CSV", help="Write attention profiles here")
    infer.add_argument("--layer", type=int, default=0, help="Encoder layer profiled by --record-attention")

    train = commands.add_parser("train", help="Train on a directory of feature files")
    _add_config_options(train)
    train.add_argument("data", help="Directory of training feature files")
    train.add_argument("--labels", type=str, default=None, help="CSV with columns file,label")
    train.add_argument("--validation", type=str, default=None, help="Directory of validation feature files")
    train.add_argument("--output-dir", type=str, default="runs", help="Where the training log and weights go")
    train.add_argument("--model", choices=MODEL_KINDS, default=SPEECHFORMER)
    train.add_argument("--weights", type=str, default=None, help="Start from these weights")
    train.add_argument("--workers", type=int, default=1, help="Threads for validation passes")

    flops = commands.add_parser("flops", help="FLOP and parameter report for both model kinds")
    _add_config_options(flops)
    flops.add_argument("--frames", "-T", type=int, default=None, help="Input frames (default: config max_len)")
    flops.add_argument("--csv", type=str, default=None, help="Write the per-layer report to this CSV")
    flops.add_argument("--all-presets", action="store_true", help="One row per dataset preset")
    flops.add_argument("--sweep-mismatch", action="store_true", help="Costs when durations are scaled")
    flops.add_argument("--ablations", action="store_true", help="Costs of ablated variants")

    gradcheck = commands.add_parser("gradcheck", help="Finite-difference check of every ablation combination")
    _add_config_options(gradcheck)
    gradcheck.add_argument(
        "--frames", "-T", type=int, default=None, help=f"Sequence length (default: {GRADCHECK_DEFAULTS['max_len']})"
    )
    gradcheck.add_argument("--samples", type=int, default=2, help="Synthetic sequences in the loss")
    gradcheck.add_argument("--sample-fraction", type=float, default=0.05, help="Share of ordinary weights checked")
    gradcheck.add_argument("--tolerance", type=float, default=1e-4, help="Largest acceptable relative error")

    vote = commands.add_parser("vote", help="Subject-level labels by majority vote")
    vote.add_argument("predictions", help="CSV of per-utterance predictions")
    vote.add_argument("--subject-column", type=str, default="subject")
    vote.add_argument("--prediction-column", type=str, default="prediction")
    vote.add_argument("--output", type=str, default=None, help="Also write subject labels to this CSV")

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Application entry point"""
    args = build_parser().parse_args(argv)
    logger = setup_logger(args.log_level or get_log_level(), args.log_file)
    logger.info(f"Running {args.command}")
    return run_command(args)


if __name__ == "__main__":
    sys.exit(main())
