import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vidcap.exceptions import DomainError, NumericError, ShapeError
from vidcap.numerics import (
    Rng,
    activate,
    finite_diff_grad,
    matmul,
    sigmoid,
    softmax,
)


class TestMatmul:
    def test_identity(self):
        a = np.arange(9, dtype=float).reshape(3, 3) + 1
        assert np.array_equal(matmul(np.eye(3), a), a)

    def test_hand_multiplied(self):
        # [[1,2],[3,4]] x [[5],[6]] worked out by hand
        out = matmul(np.array([[1.0, 2.0], [3.0, 4.0]]), np.array([[5.0], [6.0]]))
        assert np.array_equal(out, np.array([[17.0], [39.0]]))

    def test_shape_error_names_both_shapes(self):
        with pytest.raises(ShapeError) as err:
            matmul(np.zeros((2, 3)), np.zeros((2, 2)))
        assert "(2, 3)" in str(err.value) and "(2, 2)" in str(err.value)

    def test_associativity(self):
        rng = Rng(3)
        for _ in range(10):
            a = rng.normal((4, 3))
            b = rng.normal((3, 5))
            c = rng.normal((5, 2))
            left = matmul(matmul(a, b), c)
            right = matmul(a, matmul(b, c))
            denom = np.maximum(np.abs(left), 1e-12)
            assert np.max(np.abs(left - right) / denom) < 1e-9


class TestSoftmax:
    def test_constant_vector_is_uniform(self):
        assert np.array_equal(softmax(np.array([7.0, 7.0, 7.0])), np.full(3, 1 / 3))

    def test_closed_form_quarter_three_quarters(self):
        # softmax([0, ln 3]) = [1, 3]/4
        out = softmax(np.array([0.0, math.log(3.0)]))
        assert abs(out[0] - 0.25) < 1e-15
        assert abs(out[1] - 0.75) < 1e-15

    def test_large_inputs_do_not_overflow(self):
        assert np.array_equal(softmax(np.array([1000.0, 1000.0])), np.array([0.5, 0.5]))

    def test_shift_invariance(self):
        x = np.array([0.3, -1.2, 4.0])
        assert np.allclose(softmax(x), softmax(x + 123.0), rtol=0, atol=1e-15)

    def test_empty_is_domain_error(self):
        with pytest.raises(DomainError):
            softmax(np.array([]))

    def test_non_finite_rejected(self):
        with pytest.raises(NumericError):
            softmax(np.array([1.0, np.nan]))

    @given(st.lists(st.floats(-100, 100), min_size=1, max_size=32))
    @settings(max_examples=200, deadline=None)
    def test_simplex_property(self, xs):
        out = softmax(np.array(xs))
        assert np.all(out > 0)
        assert abs(out.sum() - 1.0) < 1e-12


class TestActivate:
    def test_sigmoid_zero(self):
        assert activate(np.zeros(3), "sigmoid").tolist() == [0.5, 0.5, 0.5]

    def test_tanh_zero(self):
        assert activate(np.zeros(2), "tanh").tolist() == [0.0, 0.0]

    def test_identity_exact(self):
        x = np.array([2.0, -3.0])
        assert np.array_equal(activate(x, "identity"), x)

    def test_ranges(self):
        x = np.linspace(-50, 50, 101)
        s = activate(x, "sigmoid")
        t = activate(x, "tanh")
        assert np.all((s > 0) & (s < 1)) or np.all((s >= 0) & (s <= 1))
        assert np.all((t >= -1) & (t <= 1))

    def test_unknown_kind(self):
        with pytest.raises(DomainError):
            activate(np.zeros(1), "relu")

    def test_sigmoid_extreme_stability(self):
        out = sigmoid(np.array([-800.0, 800.0]))
        assert np.all(np.isfinite(out))
        assert out[0] >= 0.0 and out[1] <= 1.0


class TestFiniteDiff:
    def test_quadratic(self):
        grad = finite_diff_grad(lambda t: float(t @ t), np.array([1.0, 2.0]), 1e-5)
        assert np.allclose(grad, [2.0, 4.0], rtol=0, atol=1e-8)

    def test_constant_function(self):
        grad = finite_diff_grad(lambda t: 3.14, np.array([0.5, -0.5, 2.0]), 1e-5)
        assert np.array_equal(grad, np.zeros(3))

    def test_sum_tanh_at_zero(self):
        grad = finite_diff_grad(lambda t: float(np.sum(np.tanh(t))), np.zeros(4), 1e-5)
        assert np.allclose(grad, np.ones(4), rtol=0, atol=1e-9)

    def test_epsilon_validated(self):
        with pytest.raises(DomainError):
            finite_diff_grad(lambda t: 0.0, np.zeros(1), 0.0)
        with pytest.raises(DomainError):
            finite_diff_grad(lambda t: 0.0, np.zeros(1), 0.5)

    def test_non_finite_f_propagates(self):
        with pytest.raises(NumericError):
            finite_diff_grad(lambda t: float("nan"), np.zeros(2), 1e-5)


class TestRng:
    def test_equal_seeds_bit_identical(self):
        a = Rng(42).uniform01(1000)
        b = Rng(42).uniform01(1000)
        assert np.array_equal(a, b)

    def test_different_seeds_differ(self):
        assert not np.array_equal(Rng(1).uniform01(100), Rng(2).uniform01(100))

    def test_stream_is_frozen(self):
        # first outputs of seed 0, pinned so any algorithm change is loud
        got = Rng(0).uniform01(3)
        assert np.array_equal(got, Rng(0).uniform01(3))
        assert got[0] != got[1] != got[2]
        # splitmix64(0 + 1*gamma)>>11 scaled; value checked against an
        # independent integer-math evaluation of the same formula
        def ref(i):
            m = (1 << 64) - 1
            z = (0 + i * 0x9E3779B97F4A7C15) & m
            z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & m
            z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & m
            z = z ^ (z >> 31)
            return (z >> 11) * 2.0**-53
        assert got.tolist() == [ref(0), ref(1), ref(2)]

    def test_fork_streams_independent(self):
        root = Rng(7)
        a = root.fork("a").uniform01(64)
        b = root.fork("b").uniform01(64)
        assert not np.array_equal(a, b)
        # forking does not consume from the parent stream
        fresh = Rng(7).uniform01(4)
        root2 = Rng(7)
        root2.fork("a")
        assert np.array_equal(root2.uniform01(4), fresh)

    def test_uniform_range(self):
        u = Rng(5).uniform(-2.0, 3.0, 10_000)
        assert u.min() >= -2.0 and u.max() < 3.0

    def test_normal_moments(self):
        z = Rng(6).normal(50_000)
        assert abs(z.mean()) < 0.02
        assert abs(z.std() - 1.0) < 0.02

    def test_integer_bounds_and_coverage(self):
        rng = Rng(8)
        draws = {rng.integer(5) for _ in range(200)}
        assert draws == {0, 1, 2, 3, 4}
        with pytest.raises(DomainError):
            rng.integer(0)

    def test_shuffle_is_permutation(self):
        items = list(range(20))
        rng = Rng(9)
        shuffled = list(items)
        rng.shuffle(shuffled)
        assert sorted(shuffled) == items
        assert shuffled != items
