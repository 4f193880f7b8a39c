"""
Stage planning from speech-unit duration statistics
"""

import math
from dataclasses import dataclass
from typing import Optional, Tuple

from src.hierarchy.errors import PlanError
from src.utils.logger import logger

STAGE_NAMES = ("frame", "phone", "word", "utterance")
DEFAULT_LAYERS = (2, 2, 4, 4)

# ceil() of a ratio that should be an integer must not round up on float noise
_RATIO_TOLERANCE = 1e-9


def tokens_for(duration_ms: float, span_ms: float) -> int:
    """Number of tokens of length `span_ms` needed to cover `duration_ms`, at least one"""
    return max(1, math.ceil(duration_ms / span_ms - _RATIO_TOLERANCE))


@dataclass(frozen=True)
class DurationStats:
    """Typical phone and word durations; `mismatch` scales all four"""

    phone_short_ms: float = 50.0
    phone_long_ms: float = 200.0
    word_short_ms: float = 250.0
    word_long_ms: float = 1000.0
    mismatch: float = 1.0

    def __post_init__(self):
        if self.mismatch <= 0:
            raise PlanError(f"mismatch must be positive, got {self.mismatch}")
        if not 0 < self.phone_short_ms < self.phone_long_ms:
            raise PlanError(f"phone durations must satisfy 0 < short < long, got {self.phone_short_ms}, {self.phone_long_ms}")
        if not 0 < self.word_short_ms < self.word_long_ms:
            raise PlanError(f"word durations must satisfy 0 < short < long, got {self.word_short_ms}, {self.word_long_ms}")

    @property
    def phone_short(self) -> float:
        return self.phone_short_ms * self.mismatch

    @property
    def phone_long(self) -> float:
        return self.phone_long_ms * self.mismatch

    @property
    def word_short(self) -> float:
        return self.word_short_ms * self.mismatch

    @property
    def word_long(self) -> float:
        return self.word_long_ms * self.mismatch


@dataclass(frozen=True)
class PlanOverrides:
    """Explicit values that replace derived windows, merges or word-token count"""

    windows: Optional[Tuple[int, int, int]] = None
    merges: Optional[Tuple[int, int, int]] = None
    word_tokens: Optional[int] = None

    def __post_init__(self):
        for name in ("windows", "merges"):
            values = getattr(self, name)
            if values is not None and (len(values) != 3 or min(values) < 1):
                raise PlanError(f"{name} override needs three values >= 1, got {values}")
        if self.word_tokens is not None and self.word_tokens < 1:
            raise PlanError(f"word_tokens override must be >= 1, got {self.word_tokens}")


@dataclass(frozen=True)
class StagePlan:
    """Windows, merge sizes and sequence lengths of the four stages"""

    hop_ms: float
    spans_ms: Tuple[float, float, float]
    windows: Tuple[int, int, int]
    merges: Tuple[int, int, int]
    lengths: Tuple[int, int, int, int]
    word_tokens: int
    word_span_ms: float
    layers: Tuple[int, int, int, int] = DEFAULT_LAYERS
    d: int = 1024
    merging: bool = True

    @property
    def total_layers(self) -> int:
        return sum(self.layers)

    @property
    def utterance_tokens(self) -> int:
        return self.lengths[3] + self.word_tokens

    def stage_of_layer(self, layer: int) -> int:
        if not 0 <= layer < self.total_layers:
            raise PlanError(f"layer {layer} out of range for {self.total_layers} layers")
        boundary = 0
        for stage, count in enumerate(self.layers):
            boundary += count
            if layer < boundary:
                return stage
        return len(self.layers) - 1

    def token_span_ms(self, stage: int) -> float:
        """Duration covered by one token of `stage`"""
        if stage < 3:
            return self.spans_ms[stage]
        return self.spans_ms[2] * self.merges[2]

    def stage_lengths_for(self, valid_frames: int) -> Tuple[int, int, int, int]:
        """Valid token counts per stage for a sequence with `valid_frames` real frames"""
        lengths = [valid_frames]
        for m in self.merges:
            lengths.append(-(-lengths[-1] // m))
        return tuple(lengths)

    def word_tokens_for(self, valid_frames: int) -> int:
        """Word tokens used by a sequence with `valid_frames` real frames"""
        if valid_frames == self.lengths[0]:
            return self.word_tokens
        wanted = tokens_for(valid_frames * self.hop_ms, self.word_span_ms)
        return min(self.word_tokens, wanted, *self.stage_lengths_for(valid_frames)[:3])

    def summary(self) -> str:
        def fmt(values) -> str:
            return "(" + ",".join(f"{v:g}" for v in values) + ")"

        return (
            f"spans_ms={fmt(self.spans_ms)} t_w={fmt(self.windows)} m={fmt(self.merges)} "
            f"T={fmt(self.lengths)} T_z={self.word_tokens}"
        )

    def __str__(self) -> str:
        return f"StagePlan({self.summary()})"


def derive_stage_plan(
    stats: DurationStats,
    hop_ms: float,
    T_1: int,
    overrides: Optional[PlanOverrides] = None,
    layers: Tuple[int, int, int, int] = DEFAULT_LAYERS,
    d: int = 1024,
    merging: bool = True,
) -> StagePlan:
    """
    Derive windows, merge sizes and lengths from duration statistics

    Windows cover the shortest phone at the frame stage, twice the longest
    phone at the phone stage and twice the longest word at the word stage.
    Merges pool up to the shortest phone, the shortest word and the longest
    word. Without merging every stage keeps the frame hop as its span.

    Args:
        stats: Duration statistics (already carrying the mismatch factor)
        hop_ms: Frame hop of the input features
        T_1: Number of input frames
        overrides: Values that replace the derived ones
        layers: Encoder layers per stage
        d: Model width
        merging: Whether merging blocks run between stages

    Returns:
        The stage plan

    Raises:
        PlanError: If the inputs are invalid or the word tokens do not fit
    """
    if hop_ms <= 0:
        raise PlanError(f"hop must be positive, got {hop_ms}")
    if T_1 < 1:
        raise PlanError(f"sequence length must be >= 1, got {T_1}")
    if len(layers) != 4 or min(layers) < 0:
        raise PlanError(f"layers needs four counts >= 0, got {layers}")
    overrides = overrides or PlanOverrides()

    if merging:
        if overrides.merges is not None:
            merges = tuple(overrides.merges)
        else:
            m_1 = tokens_for(stats.phone_short, hop_ms)
            m_2 = tokens_for(stats.word_short, hop_ms * m_1)
            m_3 = tokens_for(stats.word_long, hop_ms * m_1 * m_2)
            merges = (m_1, m_2, m_3)
    else:
        merges = (1, 1, 1)
    spans = (hop_ms, hop_ms * merges[0], hop_ms * merges[0] * merges[1])

    if overrides.windows is not None:
        windows = tuple(overrides.windows)
    else:
        windows = (
            tokens_for(stats.phone_short, spans[0]),
            tokens_for(2 * stats.phone_long, spans[1]),
            tokens_for(2 * stats.word_long, spans[2]),
        )

    lengths = [T_1]
    for m in merges:
        lengths.append(-(-lengths[-1] // m))

    if overrides.word_tokens is not None:
        word_tokens = overrides.word_tokens
    else:
        word_tokens = tokens_for(T_1 * hop_ms, stats.word_long)
    if word_tokens > min(lengths[:3]):
        raise PlanError(f"{word_tokens} word tokens exceed the shortest stage length {min(lengths[:3])}")

    plan = StagePlan(
        hop_ms=hop_ms,
        spans_ms=spans,
        windows=windows,
        merges=merges,
        lengths=tuple(lengths),
        word_tokens=word_tokens,
        word_span_ms=stats.word_long,
        layers=tuple(layers),
        d=d,
        merging=merging,
    )
    logger.debug(f"Derived {plan}")
    return plan
