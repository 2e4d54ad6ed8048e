"""Dense float32 tensors and the small kernel set built on them.

Values are stored as contiguous row-major 32-bit floats, and every
reduction in the project (matrix products, sums, means) accumulates in
32-bit floats as well. That single precision declaration is what makes
determinism checks on whole simulation runs bit-meaningful.

Tensors are immutable: the underlying buffer is marked read-only, so they
can be shared freely across threads. There is no broadcasting beyond
scalar-with-tensor; binary operations require exactly equal shapes.
"""
from __future__ import annotations

import numpy as np

DTYPE = np.float32


class ShapeError(ValueError):
    """Operands have incompatible or malformed shapes."""


class DomainError(ValueError):
    """Input values lie outside the operation's domain."""


class Tensor:
    """Immutable dense tensor: a shape plus a flat row-major float32 buffer."""

    __slots__ = ("_array",)

    def __init__(self, values, shape: tuple[int, ...] | None = None):
        arr = np.array(values, dtype=DTYPE, order="C", copy=True)
        if shape is not None:
            arr = arr.reshape(shape)
        if arr.ndim == 0:
            arr = arr.reshape(1)
        if arr.size == 0:
            raise ShapeError(f"all dimensions must be >= 1, got shape {arr.shape}")
        arr.flags.writeable = False
        self._array = arr

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor":
        # Adopts a freshly computed float32 array without copying.
        t = object.__new__(cls)
        arr = np.ascontiguousarray(arr, dtype=DTYPE)
        if arr.ndim == 0:
            arr = arr.reshape(1)
        if arr.size == 0:
            raise ShapeError(f"all dimensions must be >= 1, got shape {arr.shape}")
        arr.flags.writeable = False
        t._array = arr
        return t

    @property
    def shape(self) -> tuple[int, ...]:
        return self._array.shape

    @property
    def size(self) -> int:
        return self._array.size

    @property
    def array(self) -> np.ndarray:
        """Read-only view with the tensor's shape."""
        return self._array

    @property
    def data(self) -> np.ndarray:
        """Read-only flat row-major view of the buffer."""
        return self._array.reshape(-1)

    def tolist(self):
        return self._array.tolist()

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape})"


def zeros(shape: tuple[int, ...]) -> Tensor:
    return Tensor._wrap(np.zeros(shape, dtype=DTYPE))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of a [m x k] and b [k x n], float32 accumulation."""
    if len(a.shape) != 2 or len(b.shape) != 2:
        raise ShapeError(f"matmul needs 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"inner dimensions differ: {a.shape} x {b.shape}")
    return Tensor._wrap(a.array @ b.array)


def _binary(a: Tensor, b: Tensor, op) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")
    return Tensor._wrap(op(a.array, b.array))


def add(a: Tensor, b: Tensor) -> Tensor:
    return _binary(a, b, np.add)


def sub(a: Tensor, b: Tensor) -> Tensor:
    return _binary(a, b, np.subtract)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Pointwise (Hadamard) product."""
    return _binary(a, b, np.multiply)


def scale(a: Tensor, factor: float) -> Tensor:
    """Scalar-with-tensor product, the only broadcasting allowed."""
    return Tensor._wrap(a.array * float(factor))


def relu(a: Tensor) -> Tensor:
    return Tensor._wrap(np.maximum(a.array, DTYPE(0.0)))


def relu_grad_mask(a: Tensor) -> Tensor:
    """1 where the input is strictly positive, else 0 (0 at exactly 0)."""
    return Tensor._wrap((a.array > 0).astype(DTYPE))


def softmax_rows(logits: Tensor) -> Tensor:
    """Row-wise softmax with max-subtraction for stability.

    Requires a 2-D tensor with at least two columns and finite entries;
    each output row is nonnegative and sums to 1 within 1e-6.
    """
    if len(logits.shape) != 2 or logits.shape[1] < 2:
        raise ShapeError(f"softmax_rows needs an n x c tensor with c >= 2, got {logits.shape}")
    arr = logits.array
    if not np.isfinite(arr).all():
        raise DomainError("softmax_rows requires finite input")
    shifted = arr - arr.max(axis=1, keepdims=True)
    exps = np.exp(shifted)
    return Tensor._wrap(exps / exps.sum(axis=1, keepdims=True))
