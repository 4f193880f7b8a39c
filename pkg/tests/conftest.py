"""
Shared fixtures: a tiny SpeechFormer++ configuration
"""

import pytest

from src.hierarchy.params import ModelShape
from src.hierarchy.planner import DurationStats, PlanOverrides, derive_stage_plan

TINY_LAYERS = (1, 1, 1, 1)
TINY_OVERRIDES = PlanOverrides(windows=(3, 3, 3), merges=(2, 2, 2), word_tokens=2)


@pytest.fixture
def tiny_plan():
    """Factory for plans of the tiny model: d=8, T_1=12, T=(12,6,3,2), T_z=2"""

    def make(merging: bool = True, T_1: int = 12, overrides: PlanOverrides = TINY_OVERRIDES):
        return derive_stage_plan(DurationStats(), 20.0, T_1, overrides, layers=TINY_LAYERS, d=8, merging=merging)

    return make


@pytest.fixture
def tiny_shape():
    """Widths of the tiny model"""
    return ModelShape(d=8, heads=2, classes=2, layers=TINY_LAYERS, word_tokens=2)
