"""
Analytic FLOP formulas and per-layer cost reports

Counts follow the attention cost model where one d x d projection of T
tokens costs T*d^2 and softmax is not counted. Feed-forward and merging
costs use two FLOPs per multiply-accumulate of their affine maps.
"""

from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import List, Optional, Union

import numpy as np
import pandas as pd

from src.analysis.params import (
    ParamCount,
    count_params_for,
    encoder_layer_params,
    merging_block_params,
)
from src.attention.encoders import transformer_encoder_step
from src.hierarchy.errors import PlanError
from src.hierarchy.model import Ablations, speechformer_block
from src.hierarchy.params import BASELINE, MODEL_KINDS, SPEECHFORMER, ModelParams, ModelShape
from src.hierarchy.planner import STAGE_NAMES, StagePlan
from src.numerics.counter import count_macs
from src.numerics.tape import Matrix
from src.utils.logger import logger

CSV_COLUMNS = ["stage", "layer", "kind", "attn_flops", "ffn_flops", "merge_flops", "params"]


def msa_flops(T: int, d: int) -> int:
    """Full multi-head self-attention over T tokens: 4Td^2 + 2T^2d"""
    return 4 * T * d * d + 2 * T * T * d


def smsa_flops(T: int, T_z: int, T_w: int, d: int) -> int:
    """Windowed attention with word tokens: 4(T+T_z)d^2 + 2T(T_w+2)d"""
    return 4 * (T + T_z) * d * d + 2 * T * (T_w + 2) * d


def local_msa_flops(T: int, T_w: int, d: int) -> int:
    """Windowed attention without word tokens: 4Td^2 + 2T*T_w*d"""
    return 4 * T * d * d + 2 * T * T_w * d


def ffn_flops(T: int, d: int, d_ff: int) -> int:
    return 2 * T * d * d_ff * 2


def merge_flops(T_next: int, T_z: int, d: int) -> int:
    """Shared affine map of a merging block over pooled tokens and word tokens"""
    return 2 * (T_next + T_z) * d * d


def gain_pct(candidate: float, reference: float) -> float:
    """Relative change of `candidate` against `reference`, in percent"""
    return 100.0 * (candidate - reference) / reference


@dataclass
class LayerCost:
    stage: str
    layer: int
    kind: str
    attention: str
    tokens: int
    attn_flops: int
    ffn_flops: int
    merge_flops: int
    params: int


@dataclass
class CostReport:
    """Per-layer costs of one model kind"""

    kind: str
    d: int
    d_ff: int
    rows: List[LayerCost] = field(default_factory=list)

    @property
    def attention_flops(self) -> int:
        return sum(row.attn_flops for row in self.rows)

    @property
    def ffn_flops(self) -> int:
        return sum(row.ffn_flops for row in self.rows)

    @property
    def merge_flops(self) -> int:
        return sum(row.merge_flops for row in self.rows)

    @property
    def core_flops(self) -> int:
        """Attention plus feed-forward, the figure compared across model kinds"""
        return self.attention_flops + self.ffn_flops

    @property
    def total_flops(self) -> int:
        return self.core_flops + self.merge_flops

    @property
    def params(self) -> int:
        return sum(row.params for row in self.rows)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([asdict(row) for row in self.rows], columns=list(LayerCost.__dataclass_fields__))

    def to_csv(self, path: Union[str, Path]) -> None:
        self.to_frame()[CSV_COLUMNS].to_csv(path, index=False)

    def to_text(self) -> str:
        return self.to_frame().to_string(index=False)


@dataclass
class CostComparison:
    """Both model kinds for the same plan"""

    baseline: CostReport
    speechformer: CostReport
    baseline_params: ParamCount
    speechformer_params: ParamCount

    @property
    def flops_gain_pct(self) -> float:
        return gain_pct(self.speechformer.core_flops, self.baseline.core_flops)

    @property
    def params_gain_pct(self) -> float:
        return gain_pct(self.speechformer_params.network, self.baseline_params.network)

    def to_frame(self) -> pd.DataFrame:
        return pd.concat([self.baseline.to_frame(), self.speechformer.to_frame()], ignore_index=True)

    def to_csv(self, path: Union[str, Path]) -> None:
        self.to_frame()[CSV_COLUMNS].to_csv(path, index=False)
        logger.info(f"Wrote cost report to {path}")


def model_flops(
    plan: StagePlan,
    kind: str,
    d_ff: Optional[int] = None,
    ablations: Ablations = Ablations(),
) -> CostReport:
    """
    Per-layer cost of a model kind under a stage plan

    Args:
        plan: Stage plan; the baseline only uses its frame count and depth
        kind: "baseline" or "speechformer"
        d_ff: Feed-forward width, half the model width when omitted
        ablations: SpeechFormer++ components to leave out

    Returns:
        CostReport with one row per encoder layer and merging block
    """
    if kind not in MODEL_KINDS:
        raise ValueError(f"unknown model kind '{kind}', must be one of {MODEL_KINDS}")
    d = plan.d
    d_ff = d // 2 if d_ff is None else d_ff
    layer_params = encoder_layer_params(d, d_ff)
    report = CostReport(kind=kind, d=d, d_ff=d_ff)

    if kind == BASELINE:
        T = plan.lengths[0]
        for layer in range(plan.total_layers):
            report.rows.append(
                LayerCost("full", layer, kind, "msa", T, msa_flops(T, d), ffn_flops(T, d, d_ff), 0, layer_params)
            )
        return report

    if plan.merging != ablations.merging:
        raise PlanError("plan was derived with a different merging setting than the ablations ask for")
    words = plan.word_tokens if ablations.word_tokens_active else 0
    layer = 0
    for stage in range(3):
        T = plan.lengths[stage]
        window = plan.windows[stage]
        for _ in range(plan.layers[stage]):
            if not ablations.unit_encoder:
                attention, attn = "msa", msa_flops(T, d)
            elif words:
                attention, attn = "smsa", smsa_flops(T, words, window, d)
            else:
                attention, attn = "local", local_msa_flops(T, window, d)
            report.rows.append(
                LayerCost(STAGE_NAMES[stage], layer, kind, attention, T, attn, ffn_flops(T, d, d_ff), 0, layer_params)
            )
            layer += 1
        if ablations.merging:
            T_next = plan.lengths[stage + 1]
            report.rows.append(
                LayerCost(
                    f"merge{stage + 1}", stage, kind, "merge", T_next, 0, 0, merge_flops(T_next, words, d), merging_block_params(d)
                )
            )

    T = plan.lengths[3] + words
    for _ in range(plan.layers[3]):
        report.rows.append(
            LayerCost(STAGE_NAMES[3], layer, kind, "msa", T, msa_flops(T, d), ffn_flops(T, d, d_ff), 0, layer_params)
        )
        layer += 1
    return report


def compare_costs(plan: StagePlan, shape: ModelShape, ablations: Ablations = Ablations()) -> CostComparison:
    """Baseline and SpeechFormer++ reports plus exact parameter counts"""
    if shape.d != plan.d:
        raise PlanError(f"plan width {plan.d} differs from model width {shape.d}")
    comparison = CostComparison(
        baseline=model_flops(plan, BASELINE, shape.ffn_width),
        speechformer=model_flops(plan, SPEECHFORMER, shape.ffn_width, ablations),
        baseline_params=count_params_for(shape, BASELINE),
        speechformer_params=count_params_for(shape, SPEECHFORMER),
    )
    logger.info(
        f"T_1={plan.lengths[0]}: FLOPs {comparison.flops_gain_pct:+.2f}%, params {comparison.params_gain_pct:+.2f}%"
    )
    return comparison


def measure_attention_macs(
    T: int,
    d: int,
    heads: int,
    t_w: Optional[int] = None,
    word_tokens: int = 0,
    seed: int = 0,
) -> int:
    """
    Run one real layer under the multiply-accumulate counter

    Without a window the layer is a standard encoder layer; with a window it
    is a SpeechFormer++ block, with word tokens when `word_tokens` > 0.

    Returns:
        Multiply-accumulates on the attention path
    """
    shape = ModelShape(d=d, heads=heads, classes=2, layers=(1, 0, 0, 0), word_tokens=max(word_tokens, 1))
    bound = ModelParams.initialize(shape, SPEECHFORMER, seed).bind()
    layer = bound.encoder_layer(0)
    x = Matrix(np.random.default_rng(seed).normal(size=(T, d)))

    with count_macs() as counter:
        if t_w is None:
            transformer_encoder_step(x, layer)
        else:
            z = bound.word_tokens(word_tokens) if word_tokens else None
            speechformer_block(x, z, layer, t_w, word_tokens > 0)
    return counter["attention"]
