"""
Tests for windows, segments, multi-head attention and the encoder layers
"""

import numpy as np
import pytest

from src.attention.encoders import msa, transformer_encoder_step, unit_encoder_step, word_encoder_step
from src.attention.params import EncoderLayerParams, MsaParams
from src.attention.windows import even_segment_of, overlap_window, segment_bounds, segment_ids, window_index
from src.hierarchy.errors import PlanError
from src.numerics.errors import ParameterError, ShapeError
from src.numerics.ops import LAYER_NORM_EPS, multiply, sum_all
from src.numerics.tape import Matrix, Tape, backward


def random_msa(d: int, heads: int, rng: np.random.Generator) -> MsaParams:
    w_q, w_k, w_v, w_o = (Matrix(rng.normal(scale=0.5, size=(d, d))) for _ in range(4))
    return MsaParams(w_q=w_q, w_k=w_k, w_v=w_v, w_o=w_o, heads=heads)


def random_layer(d: int, heads: int, seed: int, d_ff: int = 3) -> EncoderLayerParams:
    rng = np.random.default_rng(seed)
    return EncoderLayerParams(
        msa=random_msa(d, heads, rng),
        ffn_w1=Matrix(rng.normal(size=(d, d_ff))),
        ffn_b1=Matrix(rng.normal(size=(1, d_ff))),
        ffn_w2=Matrix(rng.normal(size=(d_ff, d))),
        ffn_b2=Matrix(rng.normal(size=(1, d))),
        norm1_gamma=Matrix(rng.uniform(0.5, 1.5, size=(1, d))),
        norm1_beta=Matrix(rng.normal(size=(1, d))),
        norm2_gamma=Matrix(rng.uniform(0.5, 1.5, size=(1, d))),
        norm2_beta=Matrix(rng.normal(size=(1, d))),
    )


def identity_msa(d: int, heads: int = 1) -> MsaParams:
    eye = Matrix.identity(d)
    return MsaParams(w_q=eye, w_k=eye, w_v=eye, w_o=eye, heads=heads)


def naive_attention(queries, keys, values, params: MsaParams) -> np.ndarray:
    """Per-head, per-query loop over keys"""
    q, k, v = queries @ params.w_q.data, keys @ params.w_k.data, values @ params.w_v.data
    dh = params.head_dim
    out = np.zeros((len(queries), params.d))
    for head in range(params.heads):
        cols = slice(head * dh, (head + 1) * dh)
        for i in range(len(queries)):
            scores = np.array([q[i, cols] @ k[j, cols] for j in range(len(keys))]) / np.sqrt(dh)
            weights = np.exp(scores - scores.max())
            weights /= weights.sum()
            out[i, cols] = sum(weights[j] * v[j, cols] for j in range(len(keys)))
    return out @ params.w_o.data


def naive_norm(x: np.ndarray, gamma: Matrix, beta: Matrix) -> np.ndarray:
    mean = x.mean(axis=1, keepdims=True)
    var = ((x - mean) ** 2).mean(axis=1, keepdims=True)
    return (x - mean) / np.sqrt(var + LAYER_NORM_EPS) * gamma.data + beta.data


def naive_residual(x: np.ndarray, attended: np.ndarray, layer: EncoderLayerParams) -> np.ndarray:
    x_hat = naive_norm(attended + x, layer.norm1_gamma, layer.norm1_beta)
    hidden = np.maximum(x_hat @ layer.ffn_w1.data + layer.ffn_b1.data, 0.0)
    return naive_norm(hidden @ layer.ffn_w2.data + layer.ffn_b2.data + x_hat, layer.norm2_gamma, layer.norm2_beta)


def test_overlap_window_left_edge():
    """Test that the first token's window starts with a padding slot"""
    spec = overlap_window(0, 3, 3)
    assert spec.slots == (-1, 0, 1)
    assert spec.valid == (False, True, True)
    assert spec.real_slots == (0, 1)


def test_overlap_window_interior():
    """Test an interior window with every slot real"""
    spec = overlap_window(1, 3, 3)
    assert spec.slots == (0, 1, 2)
    assert all(spec.valid)


def test_overlap_window_even_length():
    """Test that an even window takes floor(t_w/2) tokens to the left"""
    assert overlap_window(1, 4, 2).slots == (0, 1)


def test_overlap_window_errors():
    """Test window lengths and tokens out of range"""
    with pytest.raises(ParameterError):
        overlap_window(0, 3, 0)
    with pytest.raises(ParameterError):
        overlap_window(3, 3, 3)


def test_window_index_matches_overlap_window():
    """Test the batched window index against the per-token windows"""
    T, t_w = 5, 4
    index, valid = window_index(T, t_w)
    for j in range(T):
        spec = overlap_window(j, T, t_w)
        assert tuple(valid[j]) == spec.valid
        real = [int(slot) for slot, ok in zip(index[j], valid[j]) if ok]
        assert tuple(real) == spec.real_slots


def test_even_segment_of_examples():
    """Test the ceil map on even and uneven splits"""
    assert [even_segment_of(j, 6, 2) for j in range(1, 7)] == [1, 1, 1, 2, 2, 2]
    assert [even_segment_of(j, 5, 2) for j in range(1, 6)] == [1, 1, 2, 2, 2]
    assert {even_segment_of(j, 9, 1) for j in range(1, 10)} == {1}


def test_even_segment_of_too_many_word_tokens():
    """Test that more word tokens than tokens is a plan error"""
    with pytest.raises(PlanError):
        even_segment_of(1, 2, 3)


def test_segments_are_contiguous_and_cover_sequence():
    """Test segment bounds and ids agree, are contiguous and non-empty"""
    for T_i in range(1, 30):
        for T_z in range(1, T_i + 1):
            bounds = segment_bounds(T_i, T_z)
            assert bounds[0][0] == 0 and bounds[-1][1] == T_i
            assert all(stop > start for start, stop in bounds)
            assert all(bounds[k][1] == bounds[k + 1][0] for k in range(T_z - 1))
            ids = segment_ids(T_i, T_z)
            for k, (start, stop) in enumerate(bounds):
                assert (ids[start:stop] == k).all()


def test_msa_single_token_returns_value():
    """Test that one key with identity projections returns its own value row"""
    row = Matrix([[0.3, -1.2, 2.0]])
    out, record = msa(row, row, row, identity_msa(3))
    np.testing.assert_allclose(out.data, row.data)
    np.testing.assert_allclose(record.key_mass, [1.0])


def test_msa_identical_keys_split_attention():
    """Test that two identical keys each receive half of every head's attention"""
    rng = np.random.default_rng(3)
    keys = Matrix(np.tile(rng.normal(size=(1, 4)), (2, 1)))
    query = Matrix(rng.normal(size=(1, 4)))
    _, record = msa(query, keys, keys, random_msa(4, 2, rng))
    np.testing.assert_allclose(record.key_mass, [1.0, 1.0], atol=1e-15)
    assert record.total_mass == pytest.approx(2.0)


def test_msa_matches_naive_loop():
    """Test two-head attention on a random 3x4 input against a per-head loop"""
    rng = np.random.default_rng(5)
    x = rng.normal(size=(3, 4))
    params = random_msa(4, 2, rng)
    out, _ = msa(Matrix(x), Matrix(x), Matrix(x), params)
    np.testing.assert_allclose(out.data, naive_attention(x, x, x, params), atol=1e-12)


def test_msa_head_count_must_divide_width():
    """Test that three heads cannot split a width of four"""
    with pytest.raises(ShapeError):
        identity_msa(4, heads=3)


def test_word_encoder_single_token_attends_everywhere():
    """Test that one word token attends over the whole sequence"""
    rng = np.random.default_rng(9)
    x, z = rng.normal(size=(5, 4)), rng.normal(size=(1, 4))
    params = random_msa(4, 2, rng)
    out = word_encoder_step(Matrix(z), Matrix(x), params)
    np.testing.assert_allclose(out.data, naive_attention(z, x, x, params), atol=1e-12)


def test_word_encoder_constant_sequence():
    """Test that identical tokens under identity projections give that token back"""
    x = Matrix(np.tile([[1.5, -0.5]], (6, 1)))
    z = Matrix([[0.1, 0.2], [3.0, -1.0], [0.0, 0.0]])
    out = word_encoder_step(z, x, identity_msa(2))
    np.testing.assert_allclose(out.data, np.tile([[1.5, -0.5]], (3, 1)), atol=1e-12)


def test_word_encoder_matches_per_segment_oracle():
    """Test two word tokens over four tokens against naive attention on each segment"""
    rng = np.random.default_rng(13)
    x, z = rng.normal(size=(4, 2)), rng.normal(size=(2, 2))
    params = random_msa(2, 1, rng)
    out = word_encoder_step(Matrix(z), Matrix(x), params)
    expected = np.vstack([naive_attention(z[:1], x[:2], x[:2], params), naive_attention(z[1:], x[2:], x[2:], params)])
    np.testing.assert_allclose(out.data, expected, atol=1e-12)


def test_word_encoder_segments_valid_prefix_only():
    """Test that padding after the valid length is ignored"""
    rng = np.random.default_rng(17)
    x, z = rng.normal(size=(4, 2)), rng.normal(size=(2, 2))
    params = random_msa(2, 1, rng)
    padded = np.vstack([x, rng.normal(size=(3, 2))])
    np.testing.assert_allclose(
        word_encoder_step(Matrix(z), Matrix(padded), params, valid_length=4).data,
        word_encoder_step(Matrix(z), Matrix(x), params).data,
        atol=1e-12,
    )


@pytest.mark.parametrize("T", [1, 2, 5])
def test_unit_encoder_full_window_equals_transformer(T):
    """Test that a window covering the whole sequence reproduces full attention"""
    x = Matrix(np.random.default_rng(T).normal(size=(T, 4)))
    layer = random_layer(4, 2, seed=21)
    unit, unit_record = unit_encoder_step(x, None, layer, t_w=2 * T + 1, word_tokens_enabled=False)
    full, full_record = transformer_encoder_step(x, layer)
    np.testing.assert_allclose(unit.data, full.data, atol=1e-12)
    np.testing.assert_allclose(unit_record.key_mass, full_record.key_mass, atol=1e-12)


def test_unit_encoder_full_window_with_padding():
    """Test full-window equivalence when trailing tokens are padding"""
    x = Matrix(np.random.default_rng(2).normal(size=(6, 4)))
    valid = np.array([True, True, True, True, False, False])
    layer = random_layer(4, 2, seed=22)
    unit, _ = unit_encoder_step(x, None, layer, t_w=13, word_tokens_enabled=False, valid=valid)
    full, _ = transformer_encoder_step(x, layer, valid=valid)
    np.testing.assert_allclose(unit.data[:4], full.data[:4], atol=1e-12)


def test_unit_encoder_window_of_one():
    """Test that with t_w=1 and a zero feed-forward each token only sees itself"""
    rng = np.random.default_rng(4)
    d = 4
    x = rng.normal(size=(3, d))
    params = random_msa(d, 2, rng)
    ones, zeros = Matrix(np.ones((1, d))), Matrix(np.zeros((1, d)))
    layer = EncoderLayerParams(
        msa=params,
        ffn_w1=Matrix.zeros(d, 2),
        ffn_b1=Matrix.zeros(1, 2),
        ffn_w2=Matrix.zeros(2, d),
        ffn_b2=zeros,
        norm1_gamma=ones,
        norm1_beta=zeros,
        norm2_gamma=ones,
        norm2_beta=zeros,
    )
    out, _ = unit_encoder_step(Matrix(x), None, layer, t_w=1, word_tokens_enabled=False)
    attended = x @ params.w_v.data @ params.w_o.data
    expected = naive_norm(naive_norm(attended + x, ones, zeros), ones, zeros)
    np.testing.assert_allclose(out.data, expected, atol=1e-12)


def test_unit_encoder_word_token_matches_naive_loop():
    """Test windowed attention plus a word token against a per-token loop"""
    rng = np.random.default_rng(31)
    d, T, t_w = 2, 2, 3
    x, z_bar = rng.normal(size=(T, d)), rng.normal(size=(1, d))
    layer = random_layer(d, 1, seed=32)
    out, record = unit_encoder_step(Matrix(x), Matrix(z_bar), layer, t_w=t_w, word_tokens_enabled=True)

    attended = np.zeros((T, d))
    for j in range(T):
        window = [slot for slot in overlap_window(j, T, t_w).real_slots]
        keys = np.vstack([z_bar, x[window]])
        attended[j] = naive_attention(x[j : j + 1], keys, keys, layer.msa)
    np.testing.assert_allclose(out.data, naive_residual(x, attended, layer), atol=1e-12)
    assert record.word_mass.shape == (1,)


def test_unit_encoder_mass_totals():
    """Test that recorded mass sums to heads x valid queries"""
    rng = np.random.default_rng(41)
    x, z_bar = Matrix(rng.normal(size=(7, 4))), Matrix(rng.normal(size=(2, 4)))
    valid = np.array([True] * 5 + [False] * 2)
    _, record = unit_encoder_step(x, z_bar, random_layer(4, 2, seed=42), 3, True, valid=valid)
    assert record.total_mass == pytest.approx(2 * 5)
    assert record.queries == 5
    assert (record.key_mass[5:] == 0).all()


def test_unit_encoder_needs_word_tokens_when_enabled():
    """Test that enabling word tokens without any is a shape error"""
    with pytest.raises(ShapeError):
        unit_encoder_step(Matrix.zeros(3, 4), None, random_layer(4, 2, seed=1), 3, True)


def test_transformer_single_token_is_identity_mixing():
    """Test that a lone token puts all attention on itself"""
    x = np.random.default_rng(8).normal(size=(1, 4))
    layer = random_layer(4, 2, seed=9)
    out, record = transformer_encoder_step(Matrix(x), layer)
    attended = x @ layer.msa.w_v.data @ layer.msa.w_o.data
    np.testing.assert_allclose(out.data, naive_residual(x, attended, layer), atol=1e-12)
    np.testing.assert_allclose(record.key_mass, [2.0])


def test_transformer_is_permutation_equivariant():
    """Test that permuting tokens permutes the output the same way"""
    rng = np.random.default_rng(10)
    x = rng.normal(size=(4, 8))
    layer = random_layer(8, 2, seed=11, d_ff=4)
    order = np.array([2, 0, 3, 1])
    out, _ = transformer_encoder_step(Matrix(x), layer)
    permuted, _ = transformer_encoder_step(Matrix(x[order]), layer)
    np.testing.assert_allclose(permuted.data[np.argsort(order)], out.data, atol=1e-12)


def test_unit_encoder_input_gradient():
    """Test the unit layer's input gradient against central differences"""
    rng = np.random.default_rng(50)
    x0, z0 = rng.normal(size=(5, 4)), rng.normal(size=(2, 4))
    weights = Matrix(rng.normal(size=(5, 4)))
    layer = random_layer(4, 2, seed=51)

    def loss(x: Matrix, z: Matrix) -> Matrix:
        out, _ = unit_encoder_step(x, z, layer, 3, True)
        return sum_all(multiply(out, weights))

    tape = Tape()
    grads = backward(tape, loss(tape.parameter("x", x0), tape.parameter("z", z0)))

    eps = 1e-6
    for name, base in (("x", x0), ("z", z0)):
        numeric = np.zeros_like(base)
        for index in np.ndindex(base.shape):
            plus, minus = base.copy(), base.copy()
            plus[index] += eps
            minus[index] -= eps
            if name == "x":
                numeric[index] = (loss(Matrix(plus), Matrix(z0)).item() - loss(Matrix(minus), Matrix(z0)).item()) / (
                    2 * eps
                )
            else:
                numeric[index] = (loss(Matrix(x0), Matrix(plus)).item() - loss(Matrix(x0), Matrix(minus)).item()) / (
                    2 * eps
                )
        np.testing.assert_allclose(grads[name], numeric, rtol=1e-5, atol=1e-7)
