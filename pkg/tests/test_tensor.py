import numpy as np
import pytest

from fedsim.tensor import (
    DTYPE,
    DomainError,
    ShapeError,
    Tensor,
    add,
    matmul,
    mul,
    relu,
    relu_grad_mask,
    scale,
    softmax_rows,
    sub,
    zeros,
)


def test_tensor_stores_float32():
    t = Tensor([[1.0, 2.0], [3.0, 4.0]])
    assert t.array.dtype == DTYPE
    assert t.shape == (2, 2)
    assert t.size == 4


def test_tensor_copies_input():
    src = np.ones((2, 2), dtype=DTYPE)
    t = Tensor(src)
    src[0, 0] = 99.0
    assert t.array[0, 0] == 1.0


def test_tensor_array_is_read_only():
    t = Tensor([1.0, 2.0])
    with pytest.raises(ValueError):
        t.array[0] = 5.0


def test_tensor_rejects_empty_dim():
    with pytest.raises(ShapeError):
        Tensor(np.zeros((0, 3), dtype=DTYPE))


def test_zeros():
    t = zeros((3, 2))
    assert t.shape == (3, 2)
    assert not t.array.any()


def test_matmul_matches_numpy():
    a = Tensor([[1.0, 2.0], [3.0, 4.0]])
    b = Tensor([[5.0, 6.0], [7.0, 8.0]])
    expected = a.array @ b.array
    assert np.array_equal(matmul(a, b).array, expected)


def test_matmul_inner_dim_mismatch():
    with pytest.raises(ShapeError):
        matmul(Tensor([[1.0, 2.0]]), Tensor([[1.0, 2.0]]))


def test_matmul_requires_2d():
    with pytest.raises(ShapeError):
        matmul(Tensor([1.0, 2.0]), Tensor([[1.0], [2.0]]))


@pytest.mark.parametrize(
    "op,expected",
    [
        (add, [5.0, 1.0]),
        (sub, [-3.0, 5.0]),
        (mul, [4.0, -6.0]),
    ],
)
def test_elementwise_ops(op, expected):
    a = Tensor([1.0, 3.0])
    b = Tensor([4.0, -2.0])
    assert op(a, b).tolist() == expected


def test_elementwise_shape_mismatch():
    with pytest.raises(ShapeError):
        add(Tensor([1.0, 2.0]), Tensor([[1.0, 2.0]]))


def test_scale():
    assert scale(Tensor([2.0, -4.0]), 0.5).tolist() == [1.0, -2.0]


def test_relu_and_mask_at_zero():
    # the gradient convention at exactly 0 is 0
    t = Tensor([-1.0, 0.0, 2.0])
    assert relu(t).tolist() == [0.0, 0.0, 2.0]
    assert relu_grad_mask(t).tolist() == [0.0, 0.0, 1.0]


def test_softmax_rows_sum_to_one():
    logits = Tensor([[1.0, 2.0, 3.0], [-5.0, 0.0, 5.0]])
    p = softmax_rows(logits).array
    assert np.allclose(p.sum(axis=1), 1.0, atol=1e-6)
    assert (p > 0).all()


def test_softmax_rows_shift_invariant_and_stable():
    logits = Tensor([[1000.0, 1001.0]])
    p = softmax_rows(logits).array
    expected = 1.0 / (1.0 + np.exp(-1.0))
    assert np.isfinite(p).all()
    assert p[0, 1] == pytest.approx(expected, rel=1e-6)


def test_softmax_rows_rejects_non_finite():
    with pytest.raises(DomainError):
        softmax_rows(Tensor([[np.inf, 0.0]]))


def test_softmax_rows_rejects_single_column():
    with pytest.raises(ShapeError):
        softmax_rows(Tensor([[1.0], [2.0]]))
