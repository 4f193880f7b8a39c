"""
SGD with momentum and cosine learning-rate annealing
"""

import math
from typing import Dict, Mapping, Tuple

import numpy as np

from src.hierarchy.params import ModelParams
from src.numerics.errors import ShapeError

FINAL_LR_FRACTION = 0.01


def cosine_lr(epoch: int, total: int, lr0: float) -> float:
    """Cosine decay from lr0 at epoch 0 to 1% of lr0 at epoch `total`"""
    if not 0 <= epoch <= total:
        raise ValueError(f"epoch {epoch} outside [0, {total}]")
    if total == 0:
        return lr0
    lr_final = FINAL_LR_FRACTION * lr0
    return lr_final + 0.5 * (lr0 - lr_final) * (1.0 + math.cos(math.pi * epoch / total))


def sgd_momentum_step(
    params: Mapping[str, np.ndarray],
    grads: Mapping[str, np.ndarray],
    velocity: Mapping[str, np.ndarray],
    lr: float,
    momentum: float = 0.9,
) -> Tuple[Dict[str, np.ndarray], Dict[str, np.ndarray]]:
    """
    Classical momentum: v <- momentum * v + g, p <- p - lr * v

    Missing velocity entries start at zero. Inputs are left untouched.
    """
    new_params: Dict[str, np.ndarray] = {}
    new_velocity: Dict[str, np.ndarray] = {}
    for name, values in params.items():
        grad = grads.get(name)
        if grad is None:
            new_params[name] = values
            continue
        if np.shape(grad) != np.shape(values):
            raise ShapeError(f"{name}: gradient shape {np.shape(grad)} does not match {np.shape(values)}")
        previous = velocity.get(name)
        step = grad if previous is None else momentum * previous + grad
        new_velocity[name] = step
        new_params[name] = values - lr * step
    return new_params, new_velocity


class SGDMomentum:
    """Optimiser state for one model"""

    def __init__(self, momentum: float = 0.9):
        self.momentum = momentum
        self.velocity: Dict[str, np.ndarray] = {}

    def step(self, params: ModelParams, grads: Mapping[str, np.ndarray], lr: float) -> ModelParams:
        updated, self.velocity = sgd_momentum_step(params.arrays, grads, self.velocity, lr, self.momentum)
        return ModelParams(updated, params.heads)
