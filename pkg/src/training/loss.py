"""
Categorical cross-entropy in bits
"""

from typing import Sequence, Union

import numpy as np

from src.numerics.ops import PROBABILITY_FLOOR, log2_clamped, multiply, scale, sum_all
from src.numerics.tape import Matrix

ROW_SUM_TOLERANCE = 1e-9


class LossInputError(ValueError):
    """Exception raised for malformed probabilities or labels"""
    pass


def one_hot(labels: Sequence[int], classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=int)
    if labels.ndim != 1:
        raise LossInputError(f"labels must be a flat list, got shape {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= classes):
        raise LossInputError(f"labels must lie in [0, {classes}), got {labels.tolist()}")
    return np.eye(classes)[labels]


def cross_entropy(probs: Matrix, targets: np.ndarray) -> Matrix:
    """
    -(1/S) sum_s sum_c y_sc log2(p_sc), differentiable in `probs`

    Args:
        probs: S x C matrix whose rows each sum to 1
        targets: S x C one-hot labels

    Returns:
        1 x 1 loss

    Raises:
        LossInputError: If rows are not stochastic or shapes disagree
    """
    targets = np.asarray(targets, dtype=np.float64)
    if targets.shape != probs.shape:
        raise LossInputError(f"labels shape {targets.shape} does not match probabilities {probs.shape}")
    row_sums = probs.data.sum(axis=1)
    if np.any(np.abs(row_sums - 1.0) > ROW_SUM_TOLERANCE) or np.any(probs.data < 0):
        raise LossInputError(f"probability rows must be non-negative and sum to 1, got sums {row_sums.tolist()}")

    picked = multiply(log2_clamped(probs, PROBABILITY_FLOOR), Matrix(targets))
    return scale(sum_all(picked), -1.0 / probs.rows)


def cce_loss(probs: Union[Matrix, np.ndarray], labels: np.ndarray) -> float:
    """Loss value for plain arrays"""
    matrix = probs if isinstance(probs, Matrix) else Matrix(probs)
    return cross_entropy(matrix, labels).item()
