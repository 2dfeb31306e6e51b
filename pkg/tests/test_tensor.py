"""Contract tests for the strict fp64 tensor primitives."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ttlm.tensor import (
    NumericalDivergenceError,
    ShapeError,
    add,
    as_tensor,
    contract_mode,
    generalized_inner_product,
    hadamard,
    inner_product,
    matmul,
    matvec,
    one_hot,
    reshape,
    scale,
    softmax,
    tanh_elementwise,
    tensor_product,
)


def small_int_tensor(max_order=3, max_dim=3):
    """Tensors with small integer entries: products and sums are exact in fp64."""
    return st.integers(1, max_order).flatmap(
        lambda order: st.lists(st.integers(1, max_dim), min_size=order, max_size=order).flatmap(
            lambda shape: st.lists(
                st.integers(-3, 3), min_size=math.prod(shape), max_size=math.prod(shape)
            ).map(lambda flat: np.array(flat, dtype=np.float64).reshape(shape))
        )
    )


class TestAsTensor:
    def test_rejects_scalars(self):
        with pytest.raises(ShapeError):
            as_tensor(3.0)

    def test_rejects_empty_modes(self):
        with pytest.raises(ShapeError):
            as_tensor(np.zeros((2, 0)))

    def test_coerces_to_float64(self):
        t = as_tensor([[1, 2], [3, 4]])
        assert t.dtype == np.float64 and t.shape == (2, 2)


class TestTensorProduct:
    def test_basis_vectors(self):
        out = tensor_product([1.0, 0.0], [0.0, 1.0])
        np.testing.assert_array_equal(out, [[0.0, 1.0], [0.0, 0.0]])

    def test_scalar_like(self):
        np.testing.assert_array_equal(tensor_product([2.0], [3.0]), [[6.0]])

    def test_two_vectors_double_loop(self):
        a, b = np.array([1.0, 2.0]), np.array([3.0, 4.0])
        out = tensor_product(a, b)
        expected = np.empty((2, 2))
        for i in range(2):
            for j in range(2):
                expected[i, j] = a[i] * b[j]
        np.testing.assert_array_equal(out, expected)
        np.testing.assert_array_equal(out, [[3.0, 4.0], [6.0, 8.0]])

    def test_shape_is_concatenation(self):
        out = tensor_product(np.ones((2, 3)), np.ones((4,)))
        assert out.shape == (2, 3, 4)

    @given(small_int_tensor(), small_int_tensor(), small_int_tensor())
    @settings(max_examples=60, deadline=None)
    def test_associative_up_to_reshape(self, a, b, c):
        left = tensor_product(tensor_product(a, b), c)
        right = tensor_product(a, tensor_product(b, c))
        np.testing.assert_array_equal(left.reshape(-1), right.reshape(-1))


class TestInnerProduct:
    def test_identity_with_itself(self):
        eye = np.eye(2)
        assert inner_product(eye, eye) == 2.0

    def test_vector_example(self):
        assert inner_product([1.0, 2.0, 3.0], [4.0, 5.0, 6.0]) == 32.0

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            inner_product(np.ones(3), np.ones(4))

    @given(small_int_tensor())
    @settings(max_examples=30, deadline=None)
    def test_agrees_with_full_generalized(self, a):
        b = a + 1.0
        full = generalized_inner_product(a, b, a.ndim)
        assert abs(inner_product(a, b) - full) <= 1e-12


class TestGeneralizedInnerProduct:
    def test_no_shared_modes_is_outer_product(self):
        a, b = np.array([1.0, 2.0]), np.array([3.0, 4.0, 5.0])
        out = generalized_inner_product(a, b, 0)
        np.testing.assert_array_equal(out, tensor_product(a, b))
        assert out.shape == (2, 3)

    def test_matrix_case_matches_matmul(self):
        rng = np.random.default_rng(3)
        a = rng.normal(size=(2, 3))
        b = rng.normal(size=(2, 4))
        out = generalized_inner_product(a, b, 1)
        np.testing.assert_allclose(out, a.T @ b, atol=1e-14)

    def test_one_trailing_mode_gives_vector(self):
        rng = np.random.default_rng(4)
        a = rng.normal(size=(2, 3))       # shared (2,3), no trailing mode
        b = rng.normal(size=(2, 3, 5))    # trailing mode of 5
        out = generalized_inner_product(a, b, 2)
        assert out.shape == (5,)
        np.testing.assert_allclose(out, np.einsum("ij,ijk->k", a, b), atol=1e-14)

    def test_shared_mode_mismatch(self):
        with pytest.raises(ShapeError):
            generalized_inner_product(np.ones((2, 3)), np.ones((3, 4)), 1)

    def test_too_many_trailing_modes(self):
        with pytest.raises(ShapeError):
            generalized_inner_product(np.ones((2, 3, 4)), np.ones((2, 5)), 1)


class TestContractMode:
    def test_identity_matvec(self):
        out = contract_mode(np.eye(2), np.array([5.0, 7.0]), 1, 0)
        np.testing.assert_array_equal(out, [5.0, 7.0])

    def test_matmul_oracle(self):
        rng = np.random.default_rng(5)
        a, b = rng.normal(size=(3, 4)), rng.normal(size=(4, 2))
        np.testing.assert_allclose(contract_mode(a, b, 1, 0), a @ b, atol=1e-14)

    def test_one_hot_contraction_is_slicing(self):
        rng = np.random.default_rng(6)
        g = rng.normal(size=(2, 5, 2))  # (bond, vocab, bond)
        w = 3
        sliced = contract_mode(g, one_hot(w, 5), 1, 0)
        np.testing.assert_array_equal(sliced, g[:, w, :])

    def test_dimension_mismatch(self):
        with pytest.raises(ShapeError):
            contract_mode(np.ones((2, 3)), np.ones(4), 1, 0)


class TestElementwiseOps:
    def test_reshape_row_major(self):
        np.testing.assert_array_equal(
            reshape([1.0, 2.0, 3.0, 4.0], (2, 2)), [[1.0, 2.0], [3.0, 4.0]]
        )

    def test_reshape_rejects_bad_size(self):
        with pytest.raises(ShapeError):
            reshape(np.ones(6), (4, 2))

    @given(small_int_tensor())
    @settings(max_examples=30, deadline=None)
    def test_reshape_round_trip_is_identity(self, a):
        flat = reshape(a, (a.size,))
        back = reshape(flat, a.shape)
        np.testing.assert_array_equal(back, a)

    def test_hadamard(self):
        np.testing.assert_array_equal(hadamard([1.0, 2.0], [3.0, 4.0]), [3.0, 8.0])
        with pytest.raises(ShapeError):
            hadamard(np.ones(2), np.ones(3))

    def test_scale_and_add(self):
        np.testing.assert_array_equal(scale([1.0, -2.0], 2.0), [2.0, -4.0])
        np.testing.assert_array_equal(add([1.0, 2.0], [3.0, 4.0]), [4.0, 6.0])
        with pytest.raises(ShapeError):
            add(np.ones(2), np.ones(3))

    def test_matvec_zero_matrix(self):
        np.testing.assert_array_equal(matvec(np.zeros((2, 2)), [9.0, 9.0]), [0.0, 0.0])

    def test_matmul_checks_shapes(self):
        with pytest.raises(ShapeError):
            matmul(np.ones((2, 3)), np.ones((2, 3)))


class TestSoftmax:
    def test_uniform(self):
        np.testing.assert_allclose(softmax([0.0, 0.0, 0.0]), np.full(3, 1 / 3), atol=1e-15)

    def test_known_values(self):
        # frozen from exp/normalize at fp64
        np.testing.assert_allclose(
            softmax([1.0, 2.0, 3.0]),
            [0.09003057317038046, 0.24472847105479767, 0.6652409557748219],
            atol=1e-12,
        )

    def test_sums_to_one(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            v = rng.normal(scale=10, size=rng.integers(1, 9))
            assert abs(softmax(v).sum() - 1.0) <= 1e-12

    @given(st.lists(st.floats(-50, 50), min_size=1, max_size=8), st.floats(-100, 100))
    @settings(max_examples=60, deadline=None)
    def test_shift_invariance(self, values, c):
        v = np.array(values)
        np.testing.assert_allclose(softmax(v + c), softmax(v), atol=1e-12)

    def test_rejects_non_finite(self):
        with pytest.raises(NumericalDivergenceError):
            softmax([1.0, np.nan])
        with pytest.raises(NumericalDivergenceError):
            softmax([np.inf, 0.0])


class TestTanh:
    def test_zero_tensor(self):
        np.testing.assert_array_equal(tanh_elementwise(np.zeros((2, 2))), np.zeros((2, 2)))

    def test_saturation(self):
        assert abs(tanh_elementwise([20.0])[0] - 1.0) <= 1e-12

    def test_math_library_oracle(self):
        assert abs(tanh_elementwise([0.5])[0] - math.tanh(0.5)) == 0.0
        np.testing.assert_allclose(tanh_elementwise([0.5]), [0.46211715726000974], atol=1e-12)
