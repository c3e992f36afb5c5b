import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from framework import diffmath as dm
from framework.errors import NumericError, RangeError, ShapeError
from framework.gradcheck import check_gradients

finite = st.floats(min_value=-5.0, max_value=5.0, allow_nan=False, allow_infinity=False)


def test_matmul_identity_and_small_product():
    a = dm.tensor([[1.0, 2.0], [3.0, 4.0]])
    assert np.array_equal((dm.tensor(np.eye(2)) @ a).data, a.data)
    assert (dm.tensor([[1.0, 2.0]]) @ dm.tensor([[3.0], [4.0]])).data.tolist() == [[11.0]]


def test_matmul_rejects_mismatched_inner_dimension():
    with pytest.raises(ShapeError):
        dm.tensor(np.ones((2, 3))) @ dm.tensor(np.ones((2, 3)))


def test_matmul_gradients_match_finite_differences():
    rng = np.random.default_rng(0)
    a = dm.parameter(rng.normal(size=(3, 3)), "a")
    b = dm.parameter(rng.normal(size=(3, 3)), "b")
    errors = check_gradients(lambda: dm.sum_all(dm.relu(a @ b) * (a @ b)), [a, b])
    assert max(errors.values()) < 1e-6


def test_row_softmax_closed_forms():
    out = dm.row_softmax(dm.tensor([[0.0, 0.0], [math.log(3.0), 0.0], [1000.0, 0.0]])).data
    assert np.allclose(out[0], [0.5, 0.5])
    assert np.allclose(out[1], [0.75, 0.25])
    assert np.all(np.isfinite(out[2]))
    assert out[2, 0] == pytest.approx(1.0)


def test_row_softmax_mask_zeroes_dropped_columns():
    out = dm.row_softmax(dm.tensor([[0.9, 0.1, 0.5]]), mask=np.array([[True, False, True]])).data
    assert out[0, 1] == 0.0
    assert out[0].sum() == pytest.approx(1.0)


@given(arrays(np.float64, (3, 4), elements=finite))
def test_row_softmax_rows_sum_to_one(x):
    out = dm.row_softmax(dm.tensor(x)).data
    assert np.allclose(out.sum(axis=1), 1.0)
    assert np.all(out >= 0.0)


def test_sigmoid_values_and_saturation():
    out = dm.sigmoid(dm.tensor([0.0, math.log(3.0), -1000.0])).data
    assert out[0] == pytest.approx(0.5)
    assert out[1] == pytest.approx(0.75)
    assert out[2] > 0.0
    assert np.isfinite(dm.log(dm.tensor(out)).data).all()


def test_log_refuses_non_positive_input():
    with pytest.raises(NumericError):
        dm.log(dm.tensor([0.0]))


def test_cross_entropy_closed_forms():
    assert dm.cross_entropy(dm.tensor([[0.0, 0.0]]), [0]).item() == pytest.approx(math.log(2.0))
    assert dm.cross_entropy(dm.tensor([[50.0, 0.0]]), [0]).item() == pytest.approx(0.0, abs=1e-12)
    assert dm.cross_entropy(dm.tensor([[0.0, 0.0], [0.0, 0.0]]), [0, 1]).item() == pytest.approx(math.log(2.0))


def test_cross_entropy_rejects_bad_targets():
    with pytest.raises(RangeError):
        dm.cross_entropy(dm.tensor([[0.0, 0.0]]), [2])
    with pytest.raises(ShapeError):
        dm.cross_entropy(dm.tensor([[0.0, 0.0]]), [0, 1])


def test_binary_cross_entropy_closed_forms():
    assert dm.binary_cross_entropy(dm.tensor([0.5]), [1.0]).item() == pytest.approx(math.log(2.0))
    assert dm.binary_cross_entropy(dm.tensor([1.0 - dm.EPS]), [1.0]).item() == pytest.approx(0.0, abs=1e-9)
    assert dm.binary_cross_entropy(dm.tensor([0.5, 0.5]), [0.0, 1.0]).item() == pytest.approx(math.log(2.0))


def test_backward_of_sum_and_half_square():
    x = dm.parameter(np.arange(6.0).reshape(2, 3))
    dm.backward(dm.sum_all(x))
    assert np.array_equal(x.grad, np.ones((2, 3)))

    y = dm.parameter([1.5, -2.0, 0.25])
    dm.backward(dm.scale(dm.sum_all(y * y), 0.5))
    assert np.allclose(y.grad, y.data)


def test_backward_accumulates_over_shared_subexpressions():
    x = dm.parameter([2.0])
    dm.backward(dm.sum_all(x * x + x))
    assert x.grad.tolist() == [5.0]


def test_backward_needs_a_scalar():
    with pytest.raises(ShapeError):
        dm.backward(dm.parameter([1.0, 2.0]))


def test_no_grad_records_nothing():
    x = dm.parameter([1.0])
    with dm.no_grad():
        y = x * x
    assert not y.requires_grad
    assert dm.is_grad_enabled()


def test_gather_and_scatter_gradients_match_finite_differences():
    rng = np.random.default_rng(1)
    a = dm.parameter(rng.normal(size=(4, 3)), "a")
    index = [0, 2, 2, 3, 1]
    weights = dm.tensor(rng.normal(size=(5, 3)))

    def loss():
        picked = dm.gather_rows(a, index) * weights
        return dm.sum_all(dm.sigmoid(dm.scatter_rows(picked, [1, 0, 1, 2, 2], 3)))

    assert check_gradients(loss, [a])["a"] < 1e-6


def test_cross_entropy_and_bce_gradients_match_finite_differences():
    rng = np.random.default_rng(2)
    z = dm.parameter(rng.normal(size=(4, 3)), "z")
    bits = np.eye(4, 3)
    errors = check_gradients(lambda: dm.cross_entropy(z, [0, 2, 1, 1]) + dm.binary_cross_entropy(dm.sigmoid(z), bits), [z])
    assert errors["z"] < 1e-6
