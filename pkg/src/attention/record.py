"""
Attention mass bookkeeping
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np


@dataclass
class AttentionRecord:
    """
    Attention mass received by each key token of one layer.

    Mass is summed over heads and over valid queries, so the total equals
    heads x queries. `key_valid` flags the keys that are real tokens when the
    sequence was padded.
    """

    key_mass: np.ndarray
    heads: int
    queries: int
    word_mass: np.ndarray = field(default_factory=lambda: np.zeros(0))
    layer: str = ""
    key_valid: Optional[np.ndarray] = None

    @property
    def tokens(self) -> int:
        return len(self.key_mass)

    @property
    def total_mass(self) -> float:
        return float(self.key_mass.sum() + self.word_mass.sum())

    def __str__(self) -> str:
        return f"AttentionRecord({self.layer or 'layer'}: {self.tokens} tokens, mass {self.total_mass:.3f})"
