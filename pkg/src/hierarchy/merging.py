"""
Merging blocks between stages
"""

from typing import Optional, Tuple

import numpy as np

from src.hierarchy.params import MergingParams
from src.numerics.counter import section
from src.numerics.errors import ParameterError
from src.numerics.ops import add_bias, avg_pool_rows, layer_norm, matmul
from src.numerics.tape import Matrix


def pool_validity(valid: Optional[np.ndarray], m: int) -> Optional[np.ndarray]:
    """A pooled token is valid when any token it averages is valid"""
    if valid is None:
        return None
    if m < 1:
        raise ParameterError(f"pooling size must be >= 1, got {m}")
    flags = np.asarray(valid, dtype=bool)
    groups = np.arange(len(flags)) // m
    return np.bincount(groups, weights=flags, minlength=-(-len(flags) // m)) > 0


def merging_block(
    x_bar: Matrix,
    z_bar: Optional[Matrix],
    m: int,
    params: MergingParams,
    valid: Optional[np.ndarray] = None,
) -> Tuple[Matrix, Optional[Matrix]]:
    """
    Shorten the sequence by average pooling, then project both paths

    Tokens: Norm_x(AvgPool(x_bar, m) W + b). Word tokens are not pooled:
    Norm_z(z_bar W + b), sharing W and b.
    """
    with section("merge"):
        pooled = avg_pool_rows(x_bar, m, valid)
        x_next = layer_norm(
            add_bias(matmul(pooled, params.weight), params.bias), params.norm_x_gamma, params.norm_x_beta
        )
        if z_bar is None:
            return x_next, None
        z_next = layer_norm(
            add_bias(matmul(z_bar, params.weight), params.bias), params.norm_z_gamma, params.norm_z_beta
        )
    return x_next, z_next
