"""
Tests for the matrix type, the tape and the differentiable operations
"""

import numpy as np
import pytest

from src.numerics.counter import count_macs, section
from src.numerics.errors import DegenerateMaskError, NonFiniteError, ParameterError, ShapeError, TapeUsageError
from src.numerics.ops import (
    add,
    add_bias,
    avg_pool_rows,
    banded_mix,
    banded_scores,
    concat_cols,
    concat_rows,
    layer_norm,
    log2_clamped,
    masked_softmax,
    matmul,
    mean_rows,
    multiply,
    relu,
    scale,
    slice_cols,
    slice_rows,
    sum_all,
    transpose,
)
from src.numerics.tape import Matrix, Tape, backward

RNG = np.random.default_rng(7)
FIXED_3x4 = RNG.normal(size=(3, 4))
FIXED_4x2 = RNG.normal(size=(4, 2))
FIXED_ROW = RNG.normal(size=(1, 4))
BAND_INDEX = np.array([[0, 1, 2], [1, 2, 3], [3, 0, 1]])


def test_matmul_identity():
    """Test that the identity leaves a matrix unchanged"""
    result = matmul(Matrix.identity(2), Matrix([[5, 6], [7, 8]]))
    np.testing.assert_array_equal(result.data, [[5, 6], [7, 8]])


def test_matmul_by_hand():
    """Test a product computed by hand"""
    result = matmul(Matrix([[1, 2], [3, 4]]), Matrix([[1], [1]]))
    np.testing.assert_array_equal(result.data, [[3], [7]])


def test_matmul_zeros():
    """Test that a zero matrix annihilates"""
    result = matmul(Matrix.zeros(2, 3), Matrix(RNG.normal(size=(3, 1))))
    np.testing.assert_array_equal(result.data, np.zeros((2, 1)))


def test_matmul_shape_mismatch():
    """Test that incompatible shapes raise a shape error"""
    with pytest.raises(ShapeError):
        matmul(Matrix.zeros(2, 3), Matrix.zeros(2, 3))


def test_matrix_rejects_non_finite():
    """Test that NaN and infinite values are refused"""
    with pytest.raises(NonFiniteError):
        Matrix([[1.0, np.nan]])
    with pytest.raises(NonFiniteError):
        scale(Matrix([[1e308]]), 1e10)


def test_matrix_shape_rules():
    """Test that vectors become rows and 3-D input is refused"""
    assert Matrix([1, 2, 3]).shape == (1, 3)
    with pytest.raises(ShapeError):
        Matrix(np.zeros((2, 2, 2)))
    with pytest.raises(ShapeError):
        Matrix.zeros(2, 2).item()


def test_masked_softmax_examples():
    """Test symmetric, single-survivor and ln2 cases"""
    np.testing.assert_allclose(masked_softmax(Matrix([[0.0, 0.0]])).data, [[0.5, 0.5]])
    np.testing.assert_array_equal(masked_softmax(Matrix([[1.0, 1.0]]), np.array([True, False])).data, [[1.0, 0.0]])
    np.testing.assert_allclose(masked_softmax(Matrix([[np.log(2.0), 0.0]])).data, [[2 / 3, 1 / 3]], atol=1e-15)


def test_masked_softmax_degenerate_row():
    """Test that a fully masked row is an error"""
    with pytest.raises(DegenerateMaskError):
        masked_softmax(Matrix([[1.0, 2.0]]), np.array([False, False]))


def test_masked_softmax_rows_sum_to_one():
    """Test row sums and exact zeros over logits in [-50, 50]"""
    logits = RNG.uniform(-50, 50, size=(20, 9))
    mask = RNG.random((20, 9)) > 0.4
    mask[:, 0] = True
    probs = masked_softmax(Matrix(logits), mask).data
    np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-12)
    assert (probs[~mask] == 0.0).all()
    assert (probs >= 0).all()


def test_layer_norm_examples():
    """Test hand-computed, constant-row and zero-gamma cases"""
    ones, zeros = Matrix([[1.0, 1.0]]), Matrix([[0.0, 0.0]])
    np.testing.assert_allclose(layer_norm(Matrix([[1.0, 3.0]]), ones, zeros, eps=0.0).data, [[-1.0, 1.0]])

    beta = Matrix([[0.25, -0.5]])
    np.testing.assert_allclose(layer_norm(Matrix([[4.0, 4.0]]), ones, beta).data, [[0.25, -0.5]])

    rows = Matrix(RNG.normal(size=(3, 2)))
    np.testing.assert_allclose(layer_norm(rows, zeros, beta).data, np.tile([0.25, -0.5], (3, 1)))


def test_layer_norm_zero_eps_constant_row():
    """Test that a constant row without eps is a non-finite error"""
    with pytest.raises(NonFiniteError):
        layer_norm(Matrix([[2.0, 2.0]]), Matrix([[1.0, 1.0]]), Matrix([[0.0, 0.0]]), eps=0.0)


def test_avg_pool_rows_examples():
    """Test partial tail, identity and constant pooling"""
    np.testing.assert_allclose(avg_pool_rows(Matrix([[1.0], [3.0], [5.0]]), 2).data, [[2.0], [5.0]])
    x = Matrix(RNG.normal(size=(5, 3)))
    np.testing.assert_array_equal(avg_pool_rows(x, 1).data, x.data)
    np.testing.assert_allclose(avg_pool_rows(Matrix([[2.0], [2.0], [2.0], [2.0]]), 4).data, [[2.0]])


def test_avg_pool_rows_rejects_zero():
    """Test that a pooling size below one is a parameter error"""
    with pytest.raises(ParameterError):
        avg_pool_rows(Matrix.zeros(3, 1), 0)


def test_avg_pool_rows_preserves_mean():
    """Test that pooling then repeating preserves column means when m divides T"""
    x = RNG.normal(size=(12, 4))
    for m in (1, 2, 3, 4, 6):
        upsampled = np.repeat(avg_pool_rows(Matrix(x), m).data, m, axis=0)
        np.testing.assert_allclose(upsampled.mean(axis=0), x.mean(axis=0), atol=1e-12)


def test_avg_pool_rows_masked():
    """Test that masked rows are left out and empty groups pool to zero"""
    x = Matrix([[1.0], [3.0], [100.0], [100.0]])
    pooled = avg_pool_rows(x, 2, np.array([True, True, False, False]))
    np.testing.assert_allclose(pooled.data, [[2.0], [0.0]])


def test_backward_linear_outer_product():
    """Test dL/dW for L = sum(W x) against its closed form and central differences"""
    tape = Tape()
    W = tape.parameter("W", FIXED_3x4)
    loss = sum_all(matmul(W, Matrix(FIXED_4x2)))
    grads = backward(tape, loss)
    expected = np.tile(FIXED_4x2.sum(axis=1), (3, 1))
    np.testing.assert_allclose(grads["W"], expected)

    eps = 1e-6
    numeric = np.zeros_like(FIXED_3x4)
    for index in np.ndindex(FIXED_3x4.shape):
        plus, minus = FIXED_3x4.copy(), FIXED_3x4.copy()
        plus[index] += eps
        minus[index] -= eps
        numeric[index] = ((plus @ FIXED_4x2).sum() - (minus @ FIXED_4x2).sum()) / (2 * eps)
    np.testing.assert_allclose(grads["W"], numeric, rtol=1e-6, atol=1e-8)


def test_backward_unused_parameter_is_zero():
    """Test that a parameter the loss ignores gets a zero gradient"""
    tape = Tape()
    W = tape.parameter("W", FIXED_3x4)
    tape.parameter("unused", FIXED_4x2)
    grads = backward(tape, sum_all(W))
    np.testing.assert_array_equal(grads["unused"], np.zeros((4, 2)))
    np.testing.assert_array_equal(grads["W"], np.ones((3, 4)))


def test_backward_quadratic():
    """Test that 0.5 |W|^2 has gradient W"""
    tape = Tape()
    W = tape.parameter("W", FIXED_3x4)
    grads = backward(tape, scale(sum_all(multiply(W, W)), 0.5))
    np.testing.assert_allclose(grads["W"], FIXED_3x4)


def test_backward_usage_errors():
    """Test losses that are not recorded scalars"""
    tape = Tape()
    W = tape.parameter("W", FIXED_3x4)
    with pytest.raises(TapeUsageError):
        backward(tape, sum_all(Matrix(FIXED_3x4)))
    with pytest.raises(TapeUsageError):
        backward(tape, scale(W, 2.0))
    with pytest.raises(TapeUsageError):
        backward(Tape(), sum_all(W))


def test_mixing_tapes_is_an_error():
    """Test that one op cannot read values from two tapes"""
    a = Tape().parameter("a", FIXED_3x4)
    b = Tape().parameter("b", FIXED_3x4)
    with pytest.raises(TapeUsageError):
        add(a, b)


def test_parameter_registration_is_idempotent():
    """Test that registering a name twice returns the same leaf"""
    tape = Tape()
    first = tape.parameter("W", FIXED_3x4)
    assert tape.parameter("W", np.zeros((3, 4))) is first


OPS = {
    "matmul_left": lambda p: matmul(p, Matrix(FIXED_4x2)),
    "matmul_right": lambda p: matmul(Matrix(FIXED_4x2.T), transpose(p)),
    "transpose": transpose,
    "add": lambda p: add(p, multiply(p, p)),
    "add_bias": lambda p: add_bias(Matrix(FIXED_3x4), slice_rows(p, 0, 1)),
    "scale": lambda p: scale(p, -1.7),
    "multiply": lambda p: multiply(p, Matrix(FIXED_3x4)),
    "relu": relu,
    "masked_softmax": lambda p: masked_softmax(p, np.array([True, False, True, True])),
    "layer_norm": lambda p: layer_norm(p, Matrix(FIXED_ROW), Matrix(FIXED_ROW[:, ::-1])),
    "layer_norm_affine": lambda p: layer_norm(Matrix(FIXED_3x4), slice_rows(p, 1, 2), slice_rows(p, 2, 3)),
    "avg_pool_rows": lambda p: avg_pool_rows(p, 2),
    "avg_pool_rows_masked": lambda p: avg_pool_rows(p, 2, np.array([True, False, True])),
    "concat_rows": lambda p: concat_rows([p, Matrix(FIXED_3x4), p]),
    "concat_cols": lambda p: concat_cols([Matrix(FIXED_3x4), p]),
    "slice_rows": lambda p: slice_rows(p, 1, 3),
    "slice_cols": lambda p: slice_cols(p, 1, 3),
    "mean_rows": lambda p: mean_rows(p, np.array([True, True, False])),
    "sum_all": sum_all,
    "log2_clamped": lambda p: log2_clamped(add_bias(scale(p, 0.1), Matrix(np.full((1, 4), 0.5)))),
    "banded_scores_query": lambda p: banded_scores(p, Matrix(np.vstack([FIXED_3x4, FIXED_ROW])), BAND_INDEX),
    "banded_scores_key": lambda p: banded_scores(Matrix(FIXED_3x4), concat_rows([p, Matrix(FIXED_ROW)]), BAND_INDEX),
    "banded_mix_weights": lambda p: banded_mix(slice_cols(p, 0, 3), Matrix(np.vstack([FIXED_3x4, FIXED_ROW])), BAND_INDEX),
    "banded_mix_values": lambda p: banded_mix(Matrix(FIXED_3x4[:, :3]), concat_rows([p, Matrix(FIXED_ROW)]), BAND_INDEX),
}


@pytest.mark.parametrize("name", sorted(OPS))
def test_op_gradients_match_finite_differences(name):
    """Test every op's vector-Jacobian product against central differences on a random 3x4 input"""
    op = OPS[name]
    values = np.random.default_rng(11).normal(size=(3, 4))
    weights = np.random.default_rng(12).normal(size=op(Matrix(values)).shape)

    def loss(matrix):
        return sum_all(multiply(op(matrix), Matrix(weights)))

    tape = Tape()
    analytic = backward(tape, loss(tape.parameter("p", values)))["p"]

    eps = 1e-6
    numeric = np.zeros_like(values)
    for index in np.ndindex(values.shape):
        plus, minus = values.copy(), values.copy()
        plus[index] += eps
        minus[index] -= eps
        numeric[index] = (loss(Matrix(plus)).item() - loss(Matrix(minus)).item()) / (2 * eps)

    error = np.max(np.abs(analytic - numeric)) / max(np.max(np.abs(numeric)), 1e-12)
    assert error < 1e-5


def test_mac_counter_sections():
    """Test that products are counted in the active section"""
    with count_macs() as counter:
        matmul(Matrix(FIXED_3x4), Matrix(FIXED_4x2))
        with section("attention"):
            matmul(Matrix(FIXED_4x2.T), Matrix(FIXED_3x4.T))
    assert counter["other"] == 3 * 4 * 2
    assert counter["attention"] == 2 * 4 * 3
    assert counter.total == 48


def test_mac_counter_inactive_outside_block():
    """Test that nothing is counted once the block has exited"""
    with count_macs() as counter:
        pass
    matmul(Matrix(FIXED_3x4), Matrix(FIXED_4x2))
    assert counter.total == 0
