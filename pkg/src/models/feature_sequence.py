"""
Acoustic feature sequence model
"""

from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np


@dataclass
class FeatureSequence:
    """Per-frame acoustic features of one utterance"""

    values: np.ndarray
    hop_ms: float
    label: Optional[int] = None
    name: str = ""

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2 or self.values.shape[0] < 1 or self.values.shape[1] < 1:
            raise ValueError(f"features must be a non-empty T x d matrix, got shape {self.values.shape}")
        if not self.hop_ms > 0:
            raise ValueError(f"hop must be positive, got {self.hop_ms}")
        if not np.isfinite(self.values).all():
            raise ValueError("feature values must be finite")
        if self.label is not None and self.label < 0:
            raise ValueError(f"label must be a class index, got {self.label}")

    @property
    def frames(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def duration_ms(self) -> float:
        return self.frames * self.hop_ms

    @classmethod
    def from_rows(cls, rows: Sequence[Sequence[float]], hop_ms: float, label: Optional[int] = None) -> "FeatureSequence":
        """Create a sequence from nested lists of frame values"""
        return cls(values=np.array(rows, dtype=np.float64), hop_ms=float(hop_ms), label=label)

    def with_label(self, label: Optional[int]) -> "FeatureSequence":
        return FeatureSequence(values=self.values, hop_ms=self.hop_ms, label=label, name=self.name)

    def __str__(self) -> str:
        tag = f" label={self.label}" if self.label is not None else ""
        return f"{self.name or 'features'}: {self.frames}x{self.width} @ {self.hop_ms:g} ms{tag}"


def pad_or_truncate(seq: FeatureSequence, max_T: int) -> Tuple[FeatureSequence, np.ndarray]:
    """
    Fit a sequence to exactly `max_T` frames

    Longer sequences lose their tail; shorter ones are zero-padded.

    Returns:
        The fitted sequence and its validity mask (True for real frames)
    """
    if max_T < 1:
        raise ValueError(f"max_T must be >= 1, got {max_T}")

    if seq.frames >= max_T:
        values = seq.values[:max_T]
        valid = np.ones(max_T, dtype=bool)
    else:
        values = np.zeros((max_T, seq.width))
        values[: seq.frames] = seq.values
        valid = np.arange(max_T) < seq.frames

    fitted = FeatureSequence(values=values, hop_ms=seq.hop_ms, label=seq.label, name=seq.name)
    return fitted, valid
