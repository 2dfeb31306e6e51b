"""Dense float64 tensor primitives with strict shape checking.

Everything downstream (TT scoring, recurrent cells, the trainer) is built on
the small set of contraction primitives defined here. Tensors are plain numpy
arrays in row-major order and double precision. There is deliberately no
broadcasting: every shape disagreement raises :class:`ShapeError`, which keeps
the brute-force oracle tests unambiguous about what was contracted with what.
"""

from __future__ import annotations

import math

import numpy as np

__all__ = [
    "ShapeError",
    "NumericalDivergenceError",
    "as_tensor",
    "one_hot",
    "tensor_product",
    "inner_product",
    "generalized_inner_product",
    "contract_mode",
    "reshape",
    "hadamard",
    "scale",
    "add",
    "matmul",
    "matvec",
    "softmax",
    "tanh_elementwise",
]


class ShapeError(ValueError):
    """Raised when operand shapes do not satisfy an operation's contract."""


class NumericalDivergenceError(RuntimeError):
    """Raised when a computation produces or receives non-finite values."""


def as_tensor(values) -> np.ndarray:
    """Coerce ``values`` to a C-contiguous float64 array of order >= 1.

    Zero-order inputs (python scalars) and empty modes are rejected: every
    tensor in this package has at least one mode and every mode has
    dimension >= 1.
    """
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim == 0:
        raise ShapeError("tensors must have order >= 1 (got a scalar)")
    arr = np.ascontiguousarray(arr)
    if any(d < 1 for d in arr.shape):
        raise ShapeError(f"every mode must have dimension >= 1, got shape {arr.shape}")
    return arr


def one_hot(index: int, size: int) -> np.ndarray:
    """Basis vector e_index in R^size."""
    if not 0 <= index < size:
        raise IndexError(f"one-hot index {index} out of range for size {size}")
    v = np.zeros(size, dtype=np.float64)
    v[index] = 1.0
    return v


def tensor_product(a, b) -> np.ndarray:
    """Order-adding outer product: result[i..., j...] = a[i...] * b[j...]."""
    a = as_tensor(a)
    b = as_tensor(b)
    return np.tensordot(a, b, axes=0)


def inner_product(a, b) -> float:
    """Sum of elementwise products of two same-shaped tensors."""
    a = as_tensor(a)
    b = as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"inner product needs equal shapes, got {a.shape} vs {b.shape}")
    return float(np.sum(a * b))


def generalized_inner_product(a, b, n: int):
    """Contract the first ``n`` (shared) modes of ``a`` and ``b``.

    Each operand may carry at most one trailing free mode beyond the shared
    ones. The result has shape (I_x, I_y) when both trailing modes are
    present; absent trailing modes are treated as dimension-1 and squeezed,
    so the result degrades to a vector or a plain scalar. ``n = 0`` is the
    outer product of the trailing modes; ``n`` equal to the full order of
    both operands reproduces :func:`inner_product`.
    """
    a = as_tensor(a)
    b = as_tensor(b)
    if n < 0:
        raise ShapeError("number of shared modes must be >= 0")
    if a.ndim not in (n, n + 1) or b.ndim not in (n, n + 1):
        raise ShapeError(
            f"operands must have order {n} or {n + 1}, got {a.ndim} and {b.ndim}"
        )
    if a.shape[:n] != b.shape[:n]:
        raise ShapeError(
            f"shared leading modes disagree: {a.shape[:n]} vs {b.shape[:n]}"
        )
    shared = int(np.prod(a.shape[:n], dtype=np.int64)) if n else 1
    ix = a.shape[n] if a.ndim == n + 1 else None
    iy = b.shape[n] if b.ndim == n + 1 else None
    am = a.reshape(shared, ix if ix is not None else 1)
    bm = b.reshape(shared, iy if iy is not None else 1)
    out = am.T @ bm
    if ix is None and iy is None:
        return float(out[0, 0])
    if ix is None:
        return out[0]
    if iy is None:
        return out[:, 0]
    return out


def contract_mode(a, b, mode_a: int, mode_b: int) -> np.ndarray:
    """Sum over one paired mode of two tensors.

    The result's modes are the remaining modes of ``a`` followed by the
    remaining modes of ``b``; its order is order(a) + order(b) - 2. A
    fully-contracted pair of vectors comes back as a scalar array.
    """
    a = as_tensor(a)
    b = as_tensor(b)
    if not 0 <= mode_a < a.ndim:
        raise ShapeError(f"mode {mode_a} out of range for order-{a.ndim} tensor")
    if not 0 <= mode_b < b.ndim:
        raise ShapeError(f"mode {mode_b} out of range for order-{b.ndim} tensor")
    if a.shape[mode_a] != b.shape[mode_b]:
        raise ShapeError(
            f"contracted modes must agree: {a.shape[mode_a]} vs {b.shape[mode_b]}"
        )
    return np.tensordot(a, b, axes=(mode_a, mode_b))


def reshape(a, new_shape) -> np.ndarray:
    """Row-major reshape; the flat data is never reordered or resized."""
    a = as_tensor(a)
    new_shape = tuple(int(d) for d in new_shape)
    if any(d < 1 for d in new_shape):
        raise ShapeError(f"every mode must have dimension >= 1, got {new_shape}")
    if math.prod(new_shape) != a.size:
        raise ShapeError(f"cannot reshape {a.size} elements to {new_shape}")
    return a.reshape(new_shape)


def hadamard(a, b) -> np.ndarray:
    """Elementwise product of two same-shaped tensors."""
    a = as_tensor(a)
    b = as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"hadamard needs equal shapes, got {a.shape} vs {b.shape}")
    return a * b


def scale(a, s: float) -> np.ndarray:
    """Multiply every entry by the scalar ``s``."""
    return as_tensor(a) * float(s)


def add(a, b) -> np.ndarray:
    """Elementwise sum of two same-shaped tensors."""
    a = as_tensor(a)
    b = as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"add needs equal shapes, got {a.shape} vs {b.shape}")
    return a + b


def matmul(a, b) -> np.ndarray:
    """Strict matrix-matrix product of two order-2 tensors."""
    a = as_tensor(a)
    b = as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul needs two matrices, got orders {a.ndim} and {b.ndim}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"inner dimensions disagree: {a.shape} x {b.shape}")
    return a @ b


def matvec(m, v) -> np.ndarray:
    """Strict matrix-vector product."""
    m = as_tensor(m)
    v = as_tensor(v)
    if m.ndim != 2 or v.ndim != 1:
        raise ShapeError(f"matvec needs a matrix and a vector, got orders {m.ndim} and {v.ndim}")
    if m.shape[1] != v.shape[0]:
        raise ShapeError(f"inner dimensions disagree: {m.shape} x {v.shape}")
    return m @ v


def softmax(v) -> np.ndarray:
    """Stable softmax of an order-1 tensor (max subtraction before exp)."""
    v = as_tensor(v)
    if v.ndim != 1:
        raise ShapeError(f"softmax is defined on vectors, got order {v.ndim}")
    if not np.all(np.isfinite(v)):
        raise NumericalDivergenceError("softmax input contains NaN or Inf")
    shifted = v - np.max(v)
    e = np.exp(shifted)
    return e / np.sum(e)


def tanh_elementwise(a) -> np.ndarray:
    """Elementwise hyperbolic tangent."""
    return np.tanh(as_tensor(a))
