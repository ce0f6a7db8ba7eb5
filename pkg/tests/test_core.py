import numpy as np
import pytest

from flprefetch.core import (
    DimensionMismatchError,
    MatrixShape,
    RngStream,
    as_param_vector,
    axpy,
    fork_stream,
    weighted_sum,
)


class TestAxpy:
    def test_identity(self):
        assert axpy(np.array([1.0, 2.0]), 1.0, np.array([0.0, 0.0])).tolist() == [1.0, 2.0]

    def test_arithmetic(self):
        assert axpy(np.array([1.0, 2.0]), 2.0, np.array([3.0, 4.0])).tolist() == [7.0, 10.0]

    def test_cancellation(self):
        assert axpy(np.array([0.5]), -1.0, np.array([0.5])).tolist() == [0.0]

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatchError):
            axpy(np.zeros(2), 1.0, np.zeros(3))


class TestWeightedSum:
    def test_singleton(self):
        assert weighted_sum([np.array([1.0, 1.0])], [1.0]).tolist() == [1.0, 1.0]

    def test_symmetry(self):
        out = weighted_sum([np.array([2.0, 0.0]), np.array([0.0, 2.0])], [0.5, 0.5])
        assert out.tolist() == [1.0, 1.0]

    def test_arithmetic(self):
        out = weighted_sum([np.array([1.0, 3.0]), np.array([3.0, 1.0])], [0.25, 0.75])
        assert out.tolist() == [2.5, 1.5]

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            weighted_sum([], [])

    def test_mismatched_weights_rejected(self):
        with pytest.raises(ValueError):
            weighted_sum([np.zeros(2)], [1.0, 2.0])

    def test_uniform_weights_near_permutation_invariant(self):
        gen = np.random.default_rng(0)
        vecs = [gen.standard_normal(64) for _ in range(10)]
        w = [1.0 / len(vecs)] * len(vecs)
        a = weighted_sum(vecs, w)
        b = weighted_sum(vecs[::-1], w)
        assert np.max(np.abs(a - b)) <= 1e-12 * max(1.0, np.max(np.abs(a)))


class TestRngStream:
    def test_same_ids_same_draws(self):
        a = fork_stream(RngStream(7), 1, 2, "quant").generator().random(100)
        b = fork_stream(RngStream(7), 1, 2, "quant").generator().random(100)
        assert np.array_equal(a, b)

    def test_different_client_differs(self):
        a = fork_stream(RngStream(7), 1, 2, "quant").generator().random(100)
        b = fork_stream(RngStream(7), 1, 3, "quant").generator().random(100)
        assert not np.array_equal(a, b)

    def test_different_seed_differs(self):
        a = fork_stream(RngStream(7), 1, 2, "quant").generator().random(100)
        b = fork_stream(RngStream(8), 1, 2, "quant").generator().random(100)
        assert not np.array_equal(a, b)

    def test_fork_order_independent_of_call_order(self):
        root = RngStream(5)
        first = root.fork("a").generator().random()
        root.fork("b")
        again = RngStream(5).fork("a").generator().random()
        assert first == again


class TestMatrixShape:
    def test_near_square_covers_dim(self):
        for dim in (1, 12, 100, 2000, 97):
            shape = MatrixShape.near_square(dim)
            assert shape.dim == dim

    def test_invalid_shape(self):
        with pytest.raises(ValueError):
            MatrixShape(0, 3)


class TestParamVector:
    def test_rejects_nan(self):
        with pytest.raises(ValueError):
            as_param_vector([1.0, float("nan")])

    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            as_param_vector([])
