"""
Subcommand handlers for the hierform command line
"""

import argparse
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Tuple, Union

import numpy as np
import pandas as pd
from rich.console import Console
from rich.table import Table

from src.analysis.flops import compare_costs
from src.analysis.params import param_overhead
from src.analysis.profile import attention_weight_profile, profile_frame
from src.analysis.sweep import ablation_costs, mismatch_sweep
from src.hierarchy.errors import PlanError
from src.hierarchy.model import Ablations, BaselineModel, ForwardResult, SpeechFormerModel
from src.hierarchy.params import BASELINE, ModelParams
from src.models.feature_sequence import FeatureSequence, pad_or_truncate
from src.numerics.errors import NumericsError
from src.training.gradcheck import GradCheckError, failing_parameters, grad_check
from src.training.loss import LossInputError
from src.training.metrics import VoteError, vote_by_subject
from src.training.synthetic import make_separable_dataset
from src.training.trainer import LabeledSequence, Trainer, batch_loss, training_log_frame
from src.utils.config import DATASET_PRESETS, RunConfig, load_run_config, parse_overrides
from src.utils.config_validator import ConfigError
from src.utils.logger import logger
from src.utils.persistence import (
    FeatureFileError,
    load_feature_dir,
    load_features,
    load_labels,
    load_params,
    load_subjects,
    save_params,
    write_frame,
)

EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_CONFIG = 3
EXIT_IO = 4
EXIT_PLAN = 5
EXIT_NUMERICS = 6
EXIT_TRAINING = 7

# Small model the gradient check runs on unless the config says otherwise
GRADCHECK_DEFAULTS = {
    "d": 8,
    "heads": 2,
    "classes": 2,
    "layers": "1,1,1,1",
    "windows": "3,3,3",
    "merges": "2,2,2",
    "word_tokens": 2,
    "max_len": 12,
}

Model = Union[SpeechFormerModel, BaselineModel]

console = Console()


def _config(args: argparse.Namespace, base: Optional[Dict[str, Any]] = None) -> RunConfig:
    return load_run_config(args.config, parse_overrides(args.set), preset=args.preset, base=base)


def fit_length(seq: FeatureSequence, config: RunConfig) -> Tuple[FeatureSequence, Optional[np.ndarray]]:
    """Apply the configured length policy; the mask is None when every frame is real"""
    if config.length_policy == "none" or (config.length_policy == "truncate" and seq.frames <= config.max_len):
        return seq, None
    fitted, valid = pad_or_truncate(seq, config.max_len)
    return fitted, None if valid.all() else valid


def build_model(config: RunConfig, kind: str, d_in: int, weights: Optional[str] = None) -> Model:
    """Model for `kind` with weights from a file or a seeded initialisation"""
    shape = config.model_shape(d_in=d_in)
    params = load_params(weights) if weights else ModelParams.initialize(shape, kind, config.seed)
    if kind == BASELINE:
        return BaselineModel(params, shape.total_layers)
    return SpeechFormerModel(params, config.plan(), config.ablations(), planner=lambda frames, hop: config.plan(frames, hop))


def plan_command(args: argparse.Namespace) -> int:
    """Print the stage plan"""
    config = _config(args)
    plan = config.plan(args.frames, args.hop)
    print(plan.summary())

    table = Table(title=f"Stage plan, hop {plan.hop_ms:g} ms, T_1={plan.lengths[0]}")
    for column in ("stage", "tokens", "span (ms)", "window", "merge", "layers"):
        table.add_column(column)
    for stage in range(4):
        table.add_row(
            ("frame", "phone", "word", "utterance")[stage],
            str(plan.lengths[stage] + (plan.word_tokens if stage == 3 else 0)),
            f"{plan.token_span_ms(stage):g}",
            str(plan.windows[stage]) if stage < 3 else "full",
            str(plan.merges[stage]) if stage < 3 else "-",
            str(plan.layers[stage]),
        )
    console.print(table)
    return EXIT_OK


def infer_command(args: argparse.Namespace) -> int:
    """Logits and predicted class per feature file"""
    config = _config(args)
    sequences = [load_features(path) for path in args.files]
    subjects = load_subjects(args.subjects) if args.subjects else None
    widths = {seq.width for seq in sequences}
    if len(widths) != 1:
        raise ConfigError(f"Configuration errors:\n- feature files have different widths {sorted(widths)}")
    model = build_model(config, args.model, widths.pop(), args.weights)
    record = args.record_attention is not None

    def run(seq: FeatureSequence) -> ForwardResult:
        fitted, valid = fit_length(seq, config)
        return model.forward(fitted, valid, record_attention=record)

    if args.workers > 1:
        with ThreadPoolExecutor(max_workers=args.workers) as pool:
            results = list(pool.map(run, sequences))
    else:
        results = [run(seq) for seq in sequences]

    rows = []
    for seq, result in zip(sequences, results):
        row: Dict[str, Any] = {"file": seq.name}
        if subjects is not None:
            row["subject"] = subjects.get(seq.name)
        row["prediction"] = result.predicted
        row.update({f"logit_{c}": float(v) for c, v in enumerate(result.logits.data[0])})
        rows.append(row)
    frame = pd.DataFrame(rows)
    print(frame.to_csv(index=False, float_format="%.10g"), end="")
    if args.output:
        write_frame(frame, args.output)

    if record:
        write_frame(_profiles(sequences, results, model, config, args.layer), args.record_attention)
    return EXIT_OK


def _profiles(
    sequences: List[FeatureSequence], results: List[ForwardResult], model: Model, config: RunConfig, layer: int
) -> pd.DataFrame:
    frames = []
    for seq, result in zip(sequences, results):
        if isinstance(model, SpeechFormerModel):
            plan = model.plan_for(fit_length(seq, config)[0])
            span = plan.token_span_ms(plan.stage_of_layer(layer))
        else:
            span = seq.hop_ms
        profile = profile_frame(attention_weight_profile(result.records, layer), span)
        profile.insert(0, "file", seq.name)
        frames.append(profile)
    return pd.concat(frames, ignore_index=True)


def _labelled(sequences: List[FeatureSequence], labels: Optional[Dict[str, int]], config: RunConfig) -> List[LabeledSequence]:
    samples = []
    for seq in sequences:
        label = labels.get(seq.name, seq.label) if labels else seq.label
        if label is None:
            raise LossInputError(f"{seq.name} has no label")
        if not 0 <= label < config.classes:
            raise LossInputError(f"{seq.name}: label {label} outside [0, {config.classes})")
        fitted, valid = fit_length(seq, config)
        samples.append(LabeledSequence(fitted, label, valid))
    return samples


def train_command(args: argparse.Namespace) -> int:
    """Train on a directory of feature files; writes the log CSV and the best weights"""
    config = _config(args)
    labels = load_labels(args.labels) if args.labels else None
    samples = _labelled(load_feature_dir(args.data), labels, config)
    if not samples:
        raise LossInputError(f"no feature files in {args.data}")
    validation = _labelled(load_feature_dir(args.validation), labels, config) if args.validation else None

    model = build_model(config, args.model, samples[0].features.width, args.weights)
    trainer = Trainer(model, config.classes, config.train_config())
    history = trainer.fit(samples, validation, workers=args.workers)

    output = Path(args.output_dir)
    write_frame(training_log_frame(history), output / "training_log.csv")
    best = history.best_params if history.best_params is not None else trainer.params
    save_params(best, output / "weights.npz")

    last = history.epochs[-1]
    table = Table(title=f"Training, {len(samples)} samples")
    for column in ("epoch", "loss", "WA", "UA", "WF1", "MF1"):
        table.add_column(column)
    for result in (history.epochs[history.best_epoch], last):
        values = result.metrics.as_dict()
        table.add_row(str(result.epoch), f"{result.loss:.4f}", *(f"{values[k]:.4f}" for k in ("WA", "UA", "WF1", "MF1")))
    console.print(table)
    return EXIT_OK


def flops_command(args: argparse.Namespace) -> int:
    """Cost reports for both model kinds"""
    config = _config(args)
    shape = config.model_shape()

    if args.all_presets:
        table = Table(title="Cost by dataset preset")
        for column in ("dataset", "T_1", "plan", "baseline FLOPs", "SpeechFormer++ FLOPs", "gain"):
            table.add_column(column)
        for name, preset in DATASET_PRESETS.items():
            variant = config.model_copy(update={"max_len": preset["max_len"], "classes": preset["classes"]})
            comparison = compare_costs(variant.plan(), variant.model_shape(), variant.ablations())
            table.add_row(
                name,
                str(preset["max_len"]),
                variant.plan().summary(),
                f"{comparison.baseline.core_flops:,}",
                f"{comparison.speechformer.core_flops:,}",
                f"{comparison.flops_gain_pct:.2f}%",
            )
        console.print(table)
    else:
        plan = config.plan(args.frames)
        comparison = compare_costs(plan, shape, config.ablations())
        overhead = param_overhead(comparison.baseline_params, comparison.speechformer_params)
        table = Table(title=f"Cost, {plan.summary()}")
        for column in ("model", "attention", "ffn", "merge", "attention+ffn", "params"):
            table.add_column(column)
        for label, report, params in (
            ("Transformer", comparison.baseline, comparison.baseline_params),
            ("SpeechFormer++", comparison.speechformer, comparison.speechformer_params),
        ):
            table.add_row(
                label,
                f"{report.attention_flops:,}",
                f"{report.ffn_flops:,}",
                f"{report.merge_flops:,}",
                f"{report.core_flops:,}",
                f"{params.network:,}",
            )
        table.add_row("gain", "", "", "", f"{comparison.flops_gain_pct:.2f}%", f"{overhead.percent:+.2f}%")
        console.print(table)
        if args.csv:
            comparison.to_csv(args.csv)

    if args.sweep_mismatch:
        sweep = mismatch_sweep(config.duration_stats(), config.hop_ms, args.frames or config.max_len, shape)
        console.print(sweep.to_string(index=False))
    if args.ablations:
        costs = ablation_costs(config.duration_stats(), config.hop_ms, args.frames or config.max_len, shape, config.plan_overrides())
        console.print(costs.to_string(index=False))
    return EXIT_OK


def gradcheck_command(args: argparse.Namespace) -> int:
    """Gradient check for every ablation combination"""
    config = _config(args, base=GRADCHECK_DEFAULTS)
    frames = args.frames or config.max_len
    width = config.d_in or config.d
    data = make_separable_dataset(samples=args.samples, frames=frames, width=width, classes=config.classes, seed=config.seed)
    batch = [LabeledSequence(seq, seq.label) for seq in data if seq.label is not None]

    table = Table(title=f"Gradient check, T={frames} d={config.d}")
    for column in ("ablations", "max rel. error", "entries", "worst", "status"):
        table.add_column(column)

    failures = 0
    for ablations in Ablations.combinations():
        variant = config.model_copy(
            update={
                "unit_encoder": ablations.unit_encoder,
                "word_encoder": ablations.word_encoder,
                "merging": ablations.merging,
                "max_len": frames,
            }
        )
        plan = variant.plan()
        model = SpeechFormerModel.create(variant.model_shape(d_in=width), plan, ablations, seed=config.seed)

        def loss_fn(params, tape, model=model):
            return batch_loss(model.with_params(params), batch, config.classes, tape)[0]

        result = grad_check(
            loss_fn, model.params, sample_fraction=args.sample_fraction, seed=config.seed, tolerance=args.tolerance
        )
        if not result.passed:
            failures += 1
            logger.error(f"{ablations.label}: gradients disagree in {failing_parameters(result)}")
        table.add_row(
            ablations.label,
            f"{result.max_error:.3e}",
            str(result.checked),
            f"{result.worst_name}{list(result.worst_index)}",
            "ok" if result.passed else "FAILED",
        )

    console.print(table)
    return EXIT_OK if failures == 0 else EXIT_TRAINING


def vote_command(args: argparse.Namespace) -> int:
    """Subject-level labels by majority vote"""
    frame = pd.read_csv(args.predictions)
    votes = vote_by_subject(frame, subject=args.subject_column, prediction=args.prediction_column)
    print(votes.to_csv(index=False), end="")
    if args.output:
        write_frame(votes, args.output)
    return EXIT_OK


COMMANDS: Dict[str, Callable[[argparse.Namespace], int]] = {
    "plan": plan_command,
    "infer": infer_command,
    "train": train_command,
    "flops": flops_command,
    "gradcheck": gradcheck_command,
    "vote": vote_command,
}


def exit_code_for(error: Exception) -> int:
    """Exit status reported for an error raised by a command"""
    if isinstance(error, ConfigError):
        return EXIT_CONFIG
    if isinstance(error, FeatureFileError):
        return error.code
    if isinstance(error, PlanError):
        return EXIT_PLAN
    if isinstance(error, NumericsError):
        return EXIT_NUMERICS
    if isinstance(error, (LossInputError, GradCheckError, VoteError)):
        return EXIT_TRAINING
    if isinstance(error, OSError):
        return EXIT_IO
    return EXIT_UNEXPECTED


def run_command(args: argparse.Namespace) -> int:
    """Run the selected subcommand and map failures to exit codes"""
    try:
        return COMMANDS[args.command](args)
    except Exception as e:
        code = exit_code_for(e)
        if code == EXIT_UNEXPECTED:
            logger.exception(f"{args.command} failed: {e}")
        else:
            logger.error(f"{args.command} failed: {e}")
        return code
