"""
Overlapping windows and even segmentation of token sequences
"""

from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

from src.hierarchy.errors import PlanError
from src.numerics.errors import ParameterError


@dataclass(frozen=True)
class WindowSpec:
    """Slots of the window centred on one query; slots outside [0, T) are padding"""

    center: int
    length: int
    slots: Tuple[int, ...]
    valid: Tuple[bool, ...]

    @property
    def real_slots(self) -> Tuple[int, ...]:
        return tuple(slot for slot, ok in zip(self.slots, self.valid) if ok)


def overlap_window(j: int, T: int, t_w: int) -> WindowSpec:
    """Window [j - floor(t_w/2), j + ceil(t_w/2)) around 0-based token j"""
    if t_w < 1:
        raise ParameterError(f"window length must be >= 1, got {t_w}")
    if not 0 <= j < T:
        raise ParameterError(f"token {j} outside sequence of length {T}")
    start = j - t_w // 2
    slots = tuple(range(start, start + t_w))
    return WindowSpec(center=j, length=t_w, slots=slots, valid=tuple(0 <= s < T for s in slots))


def window_index(T: int, t_w: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    Window slots for every query at once

    Returns:
        (index, valid): T x t_w arrays; index is clipped into [0, T) so it can
        be used for gathering, valid marks the slots that are real tokens
    """
    if t_w < 1:
        raise ParameterError(f"window length must be >= 1, got {t_w}")
    offsets = np.arange(t_w) - t_w // 2
    slots = np.arange(T)[:, None] + offsets[None, :]
    valid = (slots >= 0) & (slots < T)
    return np.clip(slots, 0, T - 1), valid


def self_slot(t_w: int) -> int:
    """Column of the query itself inside its window"""
    return t_w // 2


def _check_segmentation(T_i: int, T_z: int) -> None:
    if T_z < 1 or T_i < 1:
        raise PlanError(f"segmentation needs T_i >= 1 and T_z >= 1, got T_i={T_i}, T_z={T_z}")
    if T_z > T_i:
        raise PlanError(f"{T_z} word tokens cannot segment {T_i} tokens")


def even_segment_of(j: int, T_i: int, T_z: int) -> int:
    """1-based segment k = ceil(j * T_z / T_i) of 1-based token j"""
    _check_segmentation(T_i, T_z)
    if not 1 <= j <= T_i:
        raise ParameterError(f"token {j} outside [1, {T_i}]")
    return -(-j * T_z // T_i)


def segment_bounds(T_i: int, T_z: int) -> List[Tuple[int, int]]:
    """0-based half-open row ranges of the T_z segments"""
    _check_segmentation(T_i, T_z)
    return [((k - 1) * T_i // T_z, k * T_i // T_z) for k in range(1, T_z + 1)]


def segment_ids(T_i: int, T_z: int) -> np.ndarray:
    """0-based segment of every 0-based token"""
    _check_segmentation(T_i, T_z)
    positions = np.arange(1, T_i + 1)
    return -(-positions * T_z // T_i) - 1
