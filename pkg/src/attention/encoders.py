"""
Multi-head attention and the encoder layers built on it
"""

import math
from typing import List, Optional, Tuple

import numpy as np

from src.attention.params import EncoderLayerParams, MsaParams
from src.attention.record import AttentionRecord
from src.attention.windows import segment_bounds, segment_ids, self_slot, window_index
from src.numerics.counter import section
from src.numerics.errors import ShapeError
from src.numerics.ops import (
    add,
    add_bias,
    banded_mix,
    banded_scores,
    concat_cols,
    concat_rows,
    layer_norm,
    masked_softmax,
    matmul,
    relu,
    scale,
    slice_cols,
    slice_rows,
    transpose,
)
from src.numerics.tape import Matrix

KeyValues = Tuple[Matrix, Matrix]


def _head(m: Matrix, head: int, head_dim: int) -> Matrix:
    if m.cols == head_dim:
        return m
    return slice_cols(m, head * head_dim, (head + 1) * head_dim)


def _join_heads(outputs: List[Matrix]) -> Matrix:
    return outputs[0] if len(outputs) == 1 else concat_cols(outputs)


def _query_validity(rows: int, valid: Optional[np.ndarray]) -> np.ndarray:
    if valid is None:
        return np.ones(rows, dtype=bool)
    flags = np.asarray(valid, dtype=bool)
    if flags.shape != (rows,):
        raise ShapeError(f"validity mask of length {flags.shape} does not match {rows} tokens")
    return flags


def padding_mask(valid: Optional[np.ndarray]) -> Optional[np.ndarray]:
    """Full-attention mask: valid keys only, padded queries see just themselves"""
    if valid is None:
        return None
    flags = np.asarray(valid, dtype=bool)
    mask = np.broadcast_to(flags, (len(flags), len(flags))).copy()
    padded = np.flatnonzero(~flags)
    mask[padded, padded] = True
    return mask


def project_keys_values(x: Matrix, params: MsaParams) -> KeyValues:
    """Key and value projections, shared by the word and unit encoders of one block"""
    with section("attention"):
        return matmul(x, params.w_k), matmul(x, params.w_v)


def attend(
    q: Matrix,
    k: Matrix,
    v: Matrix,
    params: MsaParams,
    mask: Optional[np.ndarray] = None,
    query_valid: Optional[np.ndarray] = None,
) -> Tuple[Matrix, AttentionRecord]:
    """Scaled dot-product attention over already projected queries, keys and values"""
    if k.rows != v.rows:
        raise ShapeError(f"{k.rows} keys but {v.rows} values")
    head_dim = params.head_dim
    factor = 1.0 / math.sqrt(head_dim)
    counted = _query_validity(q.rows, query_valid)
    mass = np.zeros(k.rows)

    outputs = []
    for head in range(params.heads):
        scores = scale(matmul(_head(q, head, head_dim), transpose(_head(k, head, head_dim))), factor)
        weights = masked_softmax(scores, mask)
        mass += weights.data[counted].sum(axis=0)
        outputs.append(matmul(weights, _head(v, head, head_dim)))

    output = matmul(_join_heads(outputs), params.w_o)
    return output, AttentionRecord(key_mass=mass, heads=params.heads, queries=int(counted.sum()))


def msa(
    query: Matrix,
    key: Matrix,
    value: Matrix,
    params: MsaParams,
    mask: Optional[np.ndarray] = None,
    query_valid: Optional[np.ndarray] = None,
) -> Tuple[Matrix, AttentionRecord]:
    """
    Multi-head self-attention

    Args:
        query: Tq x d
        key: Tk x d
        value: Tk x d
        params: Projections shared by all heads
        mask: Per-key flags, or a Tq x Tk matrix of flags; True takes part
        query_valid: Queries whose weights are counted in the record

    Returns:
        (Tq x d output, record of the mass each key received)
    """
    with section("attention"):
        q = matmul(query, params.w_q)
        k = matmul(key, params.w_k)
        v = matmul(value, params.w_v)
        return attend(q, k, v, params, mask, query_valid)


def feed_forward(x: Matrix, layer: EncoderLayerParams) -> Matrix:
    with section("ffn"):
        hidden = relu(add_bias(matmul(x, layer.ffn_w1), layer.ffn_b1))
        return add_bias(matmul(hidden, layer.ffn_w2), layer.ffn_b2)


def _residual_block(x: Matrix, attended: Matrix, layer: EncoderLayerParams) -> Matrix:
    x_hat = layer_norm(add(attended, x), layer.norm1_gamma, layer.norm1_beta)
    return layer_norm(add(feed_forward(x_hat, layer), x_hat), layer.norm2_gamma, layer.norm2_beta)


def transformer_encoder_step(
    x: Matrix, layer: EncoderLayerParams, valid: Optional[np.ndarray] = None
) -> Tuple[Matrix, AttentionRecord]:
    """Standard encoder layer with full attention over the sequence"""
    attended, record = msa(x, x, x, layer.msa, padding_mask(valid), valid)
    if valid is not None:
        record.key_valid = np.asarray(valid, dtype=bool)
    return _residual_block(x, attended, layer), record


def word_encoder_step(
    z: Matrix,
    x: Matrix,
    params: MsaParams,
    valid_length: Optional[int] = None,
    kv: Optional[KeyValues] = None,
) -> Matrix:
    """
    Update word tokens, each attending over its own segment of the sequence

    Segments split the first `valid_length` tokens of `x` evenly among the
    rows of `z`. The output carries no residual and no norm.
    """
    length = x.rows if valid_length is None else valid_length
    bounds = segment_bounds(length, z.rows)
    keys, values = kv if kv is not None else project_keys_values(x, params)

    with section("attention"):
        queries = matmul(z, params.w_q)
        rows = []
        for segment, (start, stop) in enumerate(bounds):
            updated, _ = attend(
                slice_rows(queries, segment, segment + 1),
                slice_rows(keys, start, stop),
                slice_rows(values, start, stop),
                params,
            )
            rows.append(updated)
    return rows[0] if len(rows) == 1 else concat_rows(rows)


def unit_encoder_step(
    x: Matrix,
    z_bar: Optional[Matrix],
    layer: EncoderLayerParams,
    t_w: int,
    word_tokens_enabled: bool,
    valid: Optional[np.ndarray] = None,
    kv: Optional[KeyValues] = None,
) -> Tuple[Matrix, AttentionRecord]:
    """
    Encoder layer whose attention is restricted to a window around each token

    With word tokens enabled every query also attends to the word token of the
    segment it belongs to.
    """
    T = x.rows
    params = layer.msa
    query_valid = _query_validity(T, valid)
    slots, slot_valid = window_index(T, t_w)

    # padded keys are masked; padded queries keep only themselves
    mask = slot_valid & query_valid[slots]
    mask[~query_valid, self_slot(t_w)] = True

    keys, values = kv if kv is not None else project_keys_values(x, params)
    index = slots

    with section("attention"):
        queries = matmul(x, params.w_q)

        if word_tokens_enabled:
            if z_bar is None:
                raise ShapeError("word tokens are enabled but none were given")
            valid_length = int(query_valid.sum())
            word_slot = np.full(T, T + z_bar.rows - 1)
            word_slot[:valid_length] = T + segment_ids(valid_length, z_bar.rows)
            index = np.hstack([word_slot[:, None], slots])
            mask = np.hstack([query_valid[:, None], mask])
            keys = concat_rows([keys, matmul(z_bar, params.w_k)])
            values = concat_rows([values, matmul(z_bar, params.w_v)])

        head_dim = params.head_dim
        factor = 1.0 / math.sqrt(head_dim)
        mass = np.zeros(keys.rows)
        outputs = []
        for head in range(params.heads):
            scores = scale(banded_scores(_head(queries, head, head_dim), _head(keys, head, head_dim), index), factor)
            weights = masked_softmax(scores, mask)
            np.add.at(mass, index[query_valid], weights.data[query_valid])
            outputs.append(banded_mix(weights, _head(values, head, head_dim), index))

        attended = matmul(_join_heads(outputs), params.w_o)

    record = AttentionRecord(
        key_mass=mass[:T],
        heads=params.heads,
        queries=int(query_valid.sum()),
        word_mass=mass[T:],
        key_valid=None if valid is None else query_valid,
    )
    return _residual_block(x, attended, layer), record
