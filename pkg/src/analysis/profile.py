"""
Attention-weight profiles
"""

from typing import Sequence

import numpy as np
import pandas as pd

from src.attention.record import AttentionRecord


def attention_weight_profile(records: Sequence[AttentionRecord], layer: int = 0) -> np.ndarray:
    """
    Attention mass each token received in one layer, normalised by softmax

    Args:
        records: Records captured with attention recording on
        layer: Index into `records`, the first layer by default

    Returns:
        One weight in (0, 1) per real token, summing to 1; padded tokens are left out

    Raises:
        IndexError: If `layer` is out of range
    """
    if not 0 <= layer < len(records):
        raise IndexError(f"layer {layer} out of range for {len(records)} attention records")
    record = records[layer]
    mass = record.key_mass if record.key_valid is None else record.key_mass[record.key_valid]
    shifted = np.exp(mass - mass.max())
    return shifted / shifted.sum()


def profile_frame(profile: np.ndarray, span_ms: float) -> pd.DataFrame:
    """Profile as rows of (token, start_ms, weight)"""
    tokens = np.arange(len(profile))
    return pd.DataFrame({"token": tokens, "start_ms": tokens * span_ms, "weight": profile})
