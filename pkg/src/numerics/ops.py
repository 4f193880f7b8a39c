"""
Differentiable matrix operations
"""

from typing import Optional, Sequence

import numpy as np

from src.numerics.counter import record_macs
from src.numerics.errors import (
    DegenerateMaskError,
    NonFiniteError,
    ParameterError,
    ShapeError,
    TapeUsageError,
)
from src.numerics.tape import Matrix, Tape, VectorJacobian

LAYER_NORM_EPS = 1e-5
PROBABILITY_FLOOR = 1e-12


def _emit(op: str, data: np.ndarray, inputs: Sequence[Matrix], vjp: VectorJacobian) -> Matrix:
    """Wrap an op result, recording it when any input lives on a tape"""
    if not np.isfinite(data).all():
        raise NonFiniteError(f"{op} produced non-finite values")

    tape: Optional[Tape] = None
    for item in inputs:
        if item.tape is None:
            continue
        if tape is None:
            tape = item.tape
        elif item.tape is not tape:
            raise TapeUsageError(f"{op}: inputs are recorded on different tapes")

    if tape is None:
        return Matrix._wrap(np.ascontiguousarray(data))
    return tape.record(op, np.ascontiguousarray(data), inputs, vjp)


def _same_shape(op: str, a: Matrix, b: Matrix) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")


def _row_vector(op: str, vector: Matrix, width: int) -> None:
    if vector.shape != (1, width):
        raise ShapeError(f"{op}: expected a 1x{width} row vector, got {vector.shape}")


def matmul(a: Matrix, b: Matrix) -> Matrix:
    if a.cols != b.rows:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    record_macs(a.rows * a.cols * b.cols)
    left, right = a.data, b.data
    return _emit("matmul", left @ right, (a, b), lambda g: (g @ right.T, left.T @ g))


def transpose(a: Matrix) -> Matrix:
    return _emit("transpose", a.data.T, (a,), lambda g: (g.T,))


def add(a: Matrix, b: Matrix) -> Matrix:
    _same_shape("add", a, b)
    return _emit("add", a.data + b.data, (a, b), lambda g: (g, g))


def add_bias(a: Matrix, bias: Matrix) -> Matrix:
    """Add a 1 x cols bias row to every row of `a`"""
    _row_vector("add_bias", bias, a.cols)
    return _emit("add_bias", a.data + bias.data, (a, bias), lambda g: (g, g.sum(axis=0, keepdims=True)))


def scale(a: Matrix, factor: float) -> Matrix:
    return _emit("scale", a.data * factor, (a,), lambda g: (g * factor,))


def multiply(a: Matrix, b: Matrix) -> Matrix:
    """Elementwise product"""
    _same_shape("multiply", a, b)
    left, right = a.data, b.data
    return _emit("multiply", left * right, (a, b), lambda g: (g * right, g * left))


def relu(a: Matrix) -> Matrix:
    active = a.data > 0
    return _emit("relu", np.where(active, a.data, 0.0), (a,), lambda g: (g * active,))


def masked_softmax(logits: Matrix, mask: Optional[np.ndarray] = None) -> Matrix:
    """
    Row-wise softmax with masked entries forced to exactly zero

    Args:
        logits: Scores, one row per query
        mask: True for entries that take part; either one flag per column or
            one flag per entry. None keeps every entry

    Returns:
        Row-stochastic matrix over the unmasked entries

    Raises:
        DegenerateMaskError: If some row has no unmasked entry
    """
    scores = logits.data
    if mask is None:
        keep = np.ones(scores.shape, dtype=bool)
    else:
        keep = np.asarray(mask, dtype=bool)
        if keep.ndim == 1:
            if keep.shape[0] != logits.cols:
                raise ShapeError(f"masked_softmax: mask has {keep.shape[0]} columns, logits have {logits.cols}")
            keep = np.broadcast_to(keep, scores.shape)
        elif keep.shape != scores.shape:
            raise ShapeError(f"masked_softmax: mask shape {keep.shape} does not match {scores.shape}")

    if not keep.any(axis=1).all():
        raise DegenerateMaskError("masked_softmax: a row has every entry masked")

    shifted = scores + np.where(keep, 0.0, -np.inf)
    shifted = shifted - shifted.max(axis=1, keepdims=True)
    exps = np.exp(shifted)
    probs = exps / exps.sum(axis=1, keepdims=True)

    def vjp(g: np.ndarray):
        return (probs * (g - (g * probs).sum(axis=1, keepdims=True)),)

    return _emit("masked_softmax", probs, (logits,), vjp)


def layer_norm(x: Matrix, gamma: Matrix, beta: Matrix, eps: float = LAYER_NORM_EPS) -> Matrix:
    _row_vector("layer_norm", gamma, x.cols)
    _row_vector("layer_norm", beta, x.cols)

    centered = x.data - x.data.mean(axis=1, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv_std = 1.0 / np.sqrt((centered**2).mean(axis=1, keepdims=True) + eps)
        normed = centered * inv_std
    weight = gamma.data

    def vjp(g: np.ndarray):
        g_normed = g * weight
        grad_x = inv_std * (
            g_normed
            - g_normed.mean(axis=1, keepdims=True)
            - normed * (g_normed * normed).mean(axis=1, keepdims=True)
        )
        return grad_x, (g * normed).sum(axis=0, keepdims=True), g.sum(axis=0, keepdims=True)

    return _emit("layer_norm", normed * weight + beta.data, (x, gamma, beta), vjp)


def avg_pool_rows(x: Matrix, m: int, valid: Optional[np.ndarray] = None) -> Matrix:
    """
    Average non-overlapping groups of `m` rows

    The trailing group may be short and is averaged over the rows it has.
    With a validity mask only valid rows are averaged; a group without valid
    rows pools to zeros.
    """
    if m < 1:
        raise ParameterError(f"avg_pool_rows: pooling size must be >= 1, got {m}")
    rows = x.rows
    pooled_rows = -(-rows // m)
    groups = np.arange(rows) // m

    if valid is None:
        weights = np.ones(rows)
    else:
        weights = np.asarray(valid, dtype=np.float64)
        if weights.shape != (rows,):
            raise ShapeError(f"avg_pool_rows: mask length {weights.shape} does not match {rows} rows")

    counts = np.bincount(groups, weights=weights, minlength=pooled_rows)
    safe_counts = np.where(counts > 0, counts, 1.0)
    row_scale = (weights / safe_counts[groups])[:, None]

    pooled = np.zeros((pooled_rows, x.cols))
    np.add.at(pooled, groups, x.data * row_scale)

    return _emit("avg_pool_rows", pooled, (x,), lambda g: (g[groups] * row_scale,))


def concat_rows(parts: Sequence[Matrix]) -> Matrix:
    if not parts:
        raise ShapeError("concat_rows: nothing to concatenate")
    if len({part.cols for part in parts}) != 1:
        raise ShapeError(f"concat_rows: column counts differ {[part.cols for part in parts]}")
    splits = np.cumsum([part.rows for part in parts])[:-1]
    data = np.concatenate([part.data for part in parts], axis=0)
    return _emit("concat_rows", data, tuple(parts), lambda g: np.split(g, splits, axis=0))


def concat_cols(parts: Sequence[Matrix]) -> Matrix:
    if not parts:
        raise ShapeError("concat_cols: nothing to concatenate")
    if len({part.rows for part in parts}) != 1:
        raise ShapeError(f"concat_cols: row counts differ {[part.rows for part in parts]}")
    splits = np.cumsum([part.cols for part in parts])[:-1]
    data = np.concatenate([part.data for part in parts], axis=1)
    return _emit("concat_cols", data, tuple(parts), lambda g: np.split(g, splits, axis=1))


def slice_rows(a: Matrix, start: int, stop: int) -> Matrix:
    if not 0 <= start < stop <= a.rows:
        raise ShapeError(f"slice_rows: [{start}, {stop}) outside {a.rows} rows")

    def vjp(g: np.ndarray):
        grad = np.zeros(a.shape)
        grad[start:stop] = g
        return (grad,)

    return _emit("slice_rows", a.data[start:stop], (a,), vjp)


def slice_cols(a: Matrix, start: int, stop: int) -> Matrix:
    if not 0 <= start < stop <= a.cols:
        raise ShapeError(f"slice_cols: [{start}, {stop}) outside {a.cols} columns")

    def vjp(g: np.ndarray):
        grad = np.zeros(a.shape)
        grad[:, start:stop] = g
        return (grad,)

    return _emit("slice_cols", a.data[:, start:stop], (a,), vjp)


def mean_rows(a: Matrix, valid: Optional[np.ndarray] = None) -> Matrix:
    """Column-wise mean over rows (valid rows only when a mask is given) as a 1 x cols matrix"""
    if valid is None:
        weights = np.full(a.rows, 1.0 / a.rows)
    else:
        keep = np.asarray(valid, dtype=np.float64)
        if keep.shape != (a.rows,):
            raise ShapeError(f"mean_rows: mask length {keep.shape} does not match {a.rows} rows")
        if keep.sum() == 0:
            raise DegenerateMaskError("mean_rows: no valid rows")
        weights = keep / keep.sum()
    column = weights[:, None]
    return _emit("mean_rows", (a.data * column).sum(axis=0, keepdims=True), (a,), lambda g: (column * g,))


def sum_all(a: Matrix) -> Matrix:
    shape = a.shape
    return _emit("sum_all", np.array([[a.data.sum()]]), (a,), lambda g: (np.full(shape, g[0, 0]),))


def log2_clamped(a: Matrix, floor: float = PROBABILITY_FLOOR) -> Matrix:
    """Base-2 logarithm after clamping values into [floor, 1]"""
    inside = (a.data >= floor) & (a.data <= 1.0)
    clamped = np.clip(a.data, floor, 1.0)
    slope = np.where(inside, 1.0 / (clamped * np.log(2.0)), 0.0)
    return _emit("log2_clamped", np.log2(clamped), (a,), lambda g: (g * slope,))


def banded_scores(q: Matrix, k: Matrix, index: np.ndarray) -> Matrix:
    """
    Dot products of each query with a gathered set of keys

    out[j, s] = q[j] . k[index[j, s]]
    """
    index = np.asarray(index, dtype=np.intp)
    if index.ndim != 2 or index.shape[0] != q.rows:
        raise ShapeError(f"banded_scores: index shape {index.shape} does not match {q.rows} queries")
    if q.cols != k.cols:
        raise ShapeError(f"banded_scores: query width {q.cols} differs from key width {k.cols}")
    record_macs(index.size * q.cols)

    queries, keys = q.data, k.data
    gathered = keys[index]

    def vjp(g: np.ndarray):
        grad_keys = np.zeros(keys.shape)
        np.add.at(grad_keys, index, g[:, :, None] * queries[:, None, :])
        return np.einsum("ts,tsd->td", g, gathered), grad_keys

    return _emit("banded_scores", np.einsum("td,tsd->ts", queries, gathered), (q, k), vjp)


def banded_mix(weights: Matrix, v: Matrix, index: np.ndarray) -> Matrix:
    """
    Weighted sums of gathered value rows

    out[j] = sum_s weights[j, s] * v[index[j, s]]
    """
    index = np.asarray(index, dtype=np.intp)
    if index.shape != weights.shape:
        raise ShapeError(f"banded_mix: index shape {index.shape} does not match weights {weights.shape}")
    record_macs(index.size * v.cols)

    mix, values = weights.data, v.data
    gathered = values[index]

    def vjp(g: np.ndarray):
        grad_values = np.zeros(values.shape)
        np.add.at(grad_values, index, mix[:, :, None] * g[:, None, :])
        return np.einsum("td,tsd->ts", g, gathered), grad_values

    return _emit("banded_mix", np.einsum("ts,tsd->td", mix, gathered), (weights, v), vjp)
