"""
Cost sweeps over duration mismatch and ablations
"""

from dataclasses import replace
from typing import Iterable, Optional

import pandas as pd

from src.analysis.flops import gain_pct, model_flops
from src.hierarchy.model import Ablations
from src.hierarchy.params import BASELINE, SPEECHFORMER, ModelShape
from src.hierarchy.planner import DurationStats, PlanOverrides, derive_stage_plan

MISMATCH_FACTORS = (0.5, 0.7, 0.9, 1.0, 1.1, 1.3, 2.0)

ABLATION_VARIANTS = (
    ("full", Ablations()),
    ("no unit encoder", Ablations(unit_encoder=False)),
    ("no word encoder", Ablations(word_encoder=False)),
    ("no merging", Ablations(merging=False)),
)


def _fmt(values) -> str:
    return "(" + ",".join(str(v) for v in values) + ")"


def mismatch_sweep(
    stats: DurationStats,
    hop_ms: float,
    T_1: int,
    shape: ModelShape,
    factors: Iterable[float] = MISMATCH_FACTORS,
) -> pd.DataFrame:
    """Plan and FLOPs when every duration statistic is scaled by each factor"""
    rows = []
    for factor in factors:
        plan = derive_stage_plan(replace(stats, mismatch=factor), hop_ms, T_1, layers=shape.layers, d=shape.d)
        baseline = model_flops(plan, BASELINE, shape.ffn_width)
        speechformer = model_flops(plan, SPEECHFORMER, shape.ffn_width)
        rows.append(
            {
                "mismatch": factor,
                "t_w": _fmt(plan.windows),
                "m": _fmt(plan.merges),
                "lengths": _fmt(plan.lengths),
                "T_z": plan.word_tokens,
                "speechformer_flops": speechformer.core_flops,
                "gain_pct": gain_pct(speechformer.core_flops, baseline.core_flops),
            }
        )
    return pd.DataFrame(rows)


def ablation_costs(
    stats: DurationStats,
    hop_ms: float,
    T_1: int,
    shape: ModelShape,
    overrides: Optional[PlanOverrides] = None,
) -> pd.DataFrame:
    """FLOPs of each ablated variant relative to the full model and to the baseline"""
    full_plan = derive_stage_plan(stats, hop_ms, T_1, overrides, layers=shape.layers, d=shape.d)
    baseline = model_flops(full_plan, BASELINE, shape.ffn_width)
    full = model_flops(full_plan, SPEECHFORMER, shape.ffn_width)

    rows = []
    for name, ablations in ABLATION_VARIANTS:
        plan = full_plan
        if not ablations.merging:
            plan = derive_stage_plan(stats, hop_ms, T_1, overrides, layers=shape.layers, d=shape.d, merging=False)
        report = model_flops(plan, SPEECHFORMER, shape.ffn_width, ablations)
        rows.append(
            {
                "variant": name,
                "attn_flops": report.attention_flops,
                "ffn_flops": report.ffn_flops,
                "merge_flops": report.merge_flops,
                "core_flops": report.core_flops,
                "vs_full_pct": gain_pct(report.core_flops, full.core_flops),
                "vs_baseline_pct": gain_pct(report.core_flops, baseline.core_flops),
            }
        )
    return pd.DataFrame(rows)
