"""
Tests for FLOP formulas, cost reports, parameter counts, sweeps and attention profiles
"""

import itertools

import numpy as np
import pandas as pd
import pytest

from src.analysis.flops import (
    CSV_COLUMNS,
    compare_costs,
    gain_pct,
    local_msa_flops,
    measure_attention_macs,
    model_flops,
    msa_flops,
    smsa_flops,
)
from src.analysis.params import count_params, count_params_for, merging_block_params, param_overhead
from src.analysis.profile import attention_weight_profile, profile_frame
from src.analysis.sweep import MISMATCH_FACTORS, ablation_costs, mismatch_sweep
from src.attention.encoders import unit_encoder_step
from src.attention.record import AttentionRecord
from src.hierarchy.errors import PlanError
from src.hierarchy.model import Ablations, BaselineModel, SpeechFormerModel
from src.hierarchy.params import BASELINE, SPEECHFORMER, ModelParams, ModelShape
from src.hierarchy.planner import DurationStats, PlanOverrides, derive_stage_plan
from src.models.feature_sequence import FeatureSequence, pad_or_truncate
from src.numerics.tape import Matrix
from src.utils.config import load_run_config

PUBLISHED_GAINS = {"iemocap": -71.67, "meld": -70.58, "pitt": -71.74, "daic_woz": -72.71}
FULL_SHAPE = ModelShape(d=1024, heads=8, classes=4)


def test_msa_flops_examples():
    """Test full attention cost by hand"""
    assert msa_flops(1, 1) == 6
    assert msa_flops(326, 1024) == 1_584_996_352


def test_smsa_flops_examples():
    """Test windowed attention with word tokens by hand"""
    assert smsa_flops(1, 1, 1, 1) == 14
    assert smsa_flops(326, 7, 3, 1024) == 1_400_041_472


def test_full_window_local_attention_costs_like_msa():
    """Test that a window of T keys costs the same as full attention"""
    for T, d in ((4, 8), (326, 1024)):
        assert local_msa_flops(T, T, d) == msa_flops(T, d)


@pytest.mark.parametrize("heads", [1, 2])
@pytest.mark.parametrize("d", [8, 16])
@pytest.mark.parametrize("T", [4, 8, 16, 32, 64])
def test_counted_macs_match_full_attention_formula(T, d, heads):
    """Test that a real encoder layer performs exactly 4Td^2 + 2T^2d attention MACs"""
    assert measure_attention_macs(T, d, heads) == msa_flops(T, d)


@pytest.mark.parametrize("heads", [1, 2])
@pytest.mark.parametrize("d", [8, 16])
@pytest.mark.parametrize("T", [4, 8, 16, 32, 64])
def test_counted_macs_match_windowed_formulas(T, d, heads):
    """Test windowed layers with and without word tokens against their formulas"""
    for t_w, T_z in itertools.product((1, 3, 7), (1, 2, 4)):
        assert measure_attention_macs(T, d, heads, t_w=t_w, word_tokens=T_z) == smsa_flops(T, T_z, t_w, d)
    for t_w in (1, 3, 7):
        assert measure_attention_macs(T, d, heads, t_w=t_w) == local_msa_flops(T, t_w, d)


@pytest.mark.parametrize("dataset", sorted(PUBLISHED_GAINS))
def test_preset_flop_gains_close_to_published(dataset):
    """Test each dataset plan's attention plus feed-forward reduction within five points"""
    config = load_run_config(preset=dataset)
    comparison = compare_costs(config.plan(), config.model_shape())
    assert abs(comparison.flops_gain_pct - PUBLISHED_GAINS[dataset]) <= 5.0


def test_iemocap_gain_in_expected_range():
    """Test the 326-frame reduction lies between 66% and 77%"""
    plan = derive_stage_plan(DurationStats(), 20.0, 326)
    comparison = compare_costs(plan, FULL_SHAPE)
    assert -77.0 <= comparison.flops_gain_pct <= -66.0


def test_baseline_report_matches_formulas():
    """Test that twelve baseline layers over 326 frames sum the per-layer formulas"""
    report = model_flops(derive_stage_plan(DurationStats(), 20.0, 326), BASELINE)
    assert len(report.rows) == 12
    assert report.attention_flops == 12 * msa_flops(326, 1024)
    assert report.ffn_flops == 12 * 2 * 2 * 326 * 1024 * 512
    assert report.merge_flops == 0


def test_speechformer_report_rows():
    """Test the row layout of the SpeechFormer++ report"""
    report = model_flops(derive_stage_plan(DurationStats(), 20.0, 326), SPEECHFORMER)
    kinds = [row.attention for row in report.rows]
    assert kinds.count("smsa") == 8
    assert kinds.count("merge") == 3
    assert kinds.count("msa") == 4
    assert report.rows[0].attn_flops == smsa_flops(326, 7, 3, 1024)
    assert report.rows[-1].tokens == 13
    assert report.total_flops == report.core_flops + report.merge_flops


def test_report_rejects_mismatched_merging():
    """Test that a merging plan cannot be costed without merging"""
    plan = derive_stage_plan(DurationStats(), 20.0, 326)
    with pytest.raises(PlanError):
        model_flops(plan, SPEECHFORMER, ablations=Ablations(merging=False))
    with pytest.raises(ValueError):
        model_flops(plan, "rnn")


def test_gain_is_antisymmetric():
    """Test that swapping candidate and reference inverts the ratio"""
    comparison = compare_costs(derive_stage_plan(DurationStats(), 20.0, 224), FULL_SHAPE)
    forward = comparison.flops_gain_pct
    backward = gain_pct(comparison.baseline.core_flops, comparison.speechformer.core_flops)
    assert (1 + forward / 100) * (1 + backward / 100) == pytest.approx(1.0, abs=1e-12)


def test_cost_csv_columns(tmp_path):
    """Test the columns of the written cost report"""
    path = tmp_path / "costs.csv"
    compare_costs(derive_stage_plan(DurationStats(), 20.0, 326), FULL_SHAPE).to_csv(path)
    frame = pd.read_csv(path)
    assert list(frame.columns) == CSV_COLUMNS
    assert set(frame["kind"]) == {BASELINE, SPEECHFORMER}


def test_param_overhead_is_three_merging_blocks():
    """Test the exact parameter difference at widths 4 and 1024"""
    assert merging_block_params(4) == 36
    small = param_overhead(
        count_params_for(ModelShape(d=4, heads=1, classes=2), BASELINE),
        count_params_for(ModelShape(d=4, heads=1, classes=2), SPEECHFORMER),
    )
    assert small.difference == 108

    overhead = param_overhead(count_params_for(FULL_SHAPE, BASELINE), count_params_for(FULL_SHAPE, SPEECHFORMER))
    assert overhead.difference == 3_161_088
    assert abs(overhead.percent_of(63_640_000) - 4.95) <= 0.2


def test_count_params_matches_layout(tiny_shape):
    """Test that counting allocated arrays agrees with counting the layout"""
    params = ModelParams.initialize(tiny_shape, SPEECHFORMER, seed=0)
    assert count_params(params) == count_params_for(tiny_shape, SPEECHFORMER)
    assert count_params(params).word_tokens == 2 * 8


@pytest.mark.parametrize("kind", [BASELINE, SPEECHFORMER])
@pytest.mark.parametrize("seed", [0, 1, 17, 2024])
def test_count_params_ignores_seed(tiny_shape, kind, seed):
    """Test that re-seeding changes values but never the parameter count"""
    params = ModelParams.initialize(tiny_shape, kind, seed=seed)
    assert count_params(params) == count_params(ModelParams.initialize(tiny_shape, kind, seed=seed + 1))
    assert count_params(params) == count_params_for(tiny_shape, kind)


def test_mismatch_sweep_is_monotone():
    """Test that longer assumed durations never cost more FLOPs"""
    frame = mismatch_sweep(DurationStats(), 20.0, 326, FULL_SHAPE)
    assert list(frame["mismatch"]) == list(MISMATCH_FACTORS)
    assert (frame["speechformer_flops"].diff().dropna() <= 0).all()
    assert frame.loc[frame["mismatch"] == 1.0, "t_w"].item() == "(3,7,7)"


def test_ablation_costs():
    """Test ablated variants against the full model and the baseline"""
    frame = ablation_costs(DurationStats(), 20.0, 326, FULL_SHAPE).set_index("variant")
    assert frame.loc["full", "vs_full_pct"] == 0.0
    assert frame.loc["no unit encoder", "core_flops"] > frame.loc["full", "core_flops"]
    assert frame.loc["no merging", "core_flops"] > frame.loc["full", "core_flops"]
    assert frame.loc["no merging", "merge_flops"] == 0
    assert (frame["vs_baseline_pct"] < 0).all()


def test_profile_sums_to_one():
    """Test softmax normalisation of recorded mass"""
    record = AttentionRecord(key_mass=np.array([0.5, 2.0, 1.5]), heads=1, queries=4)
    profile = attention_weight_profile([record])
    assert profile.sum() == pytest.approx(1.0)
    assert ((profile > 0) & (profile < 1)).all()


def test_profile_is_flat_for_uniform_attention():
    """Test that zero query weights spread attention evenly over every token"""
    shape = ModelShape(d=8, heads=2, classes=2, layers=(1, 0, 0, 0))
    params = ModelParams.initialize(shape, BASELINE, seed=0).replace({"layers.0.attn.w_q": np.zeros((8, 8))})
    seq = FeatureSequence(np.random.default_rng(1).normal(size=(6, 8)), hop_ms=20.0)
    records = BaselineModel(params, 1).forward(seq, record_attention=True).records
    np.testing.assert_allclose(attention_weight_profile(records), np.full(6, 1 / 6), atol=1e-12)


def test_profile_leaves_out_padded_tokens():
    """Test that a padded key gets no profile entry and the real tokens share all the weight"""
    rng = np.random.default_rng(2)
    shape = ModelShape(d=8, heads=2, classes=2, layers=(1, 0, 0, 0))
    layer = ModelParams.initialize(shape, BASELINE, seed=3).bind().encoder_layer(0)
    valid = np.array([True] * 6 + [False])
    _, record = unit_encoder_step(Matrix(rng.normal(size=(7, 8))), None, layer, 3, False, valid=valid)
    profile = attention_weight_profile([record])
    assert len(profile) == 6
    assert profile.sum() == pytest.approx(1.0)
    mass = record.key_mass[:6]
    np.testing.assert_allclose(profile, np.exp(mass - mass.max()) / np.exp(mass - mass.max()).sum())


def test_padded_speechformer_profiles_cover_real_tokens(tiny_plan, tiny_shape):
    """Test that every layer profile of a padded sequence has one entry per real token"""
    seq = FeatureSequence(np.random.default_rng(4).normal(size=(10, 8)), hop_ms=20.0)
    padded, valid = pad_or_truncate(seq, 20)
    model = SpeechFormerModel.create(tiny_shape, tiny_plan(T_1=20), seed=5)
    records = model.forward(padded, valid, record_attention=True).records
    assert len(attention_weight_profile(records, 0)) == 10
    assert records[0].key_valid.sum() == 10 and records[0].tokens == 20
    for layer, record in enumerate(records):
        profile = attention_weight_profile(records, layer)
        real = record.tokens if record.key_valid is None else int(record.key_valid.sum())
        assert len(profile) == real
        assert profile.sum() == pytest.approx(1.0)


def test_profile_layer_out_of_range():
    """Test that asking for a missing layer is an index error"""
    with pytest.raises(IndexError):
        attention_weight_profile([], 0)


def test_profile_frame():
    """Test token start times in the profile table"""
    frame = profile_frame(np.array([0.2, 0.3, 0.5]), 60.0)
    assert list(frame.columns) == ["token", "start_ms", "weight"]
    assert list(frame["start_ms"]) == [0.0, 60.0, 120.0]


def test_override_plan_costs():
    """Test that overridden windows flow into the cost report"""
    plan = derive_stage_plan(DurationStats(), 20.0, 326, PlanOverrides(windows=(5, 5, 5)))
    report = model_flops(plan, SPEECHFORMER)
    assert report.rows[0].attn_flops == smsa_flops(326, 7, 5, 1024)
