"""Tape semantics, the optimizer, and the gradient-check harness itself."""

import numpy as np
import pytest

from esrnet.autograd import (
    NumericFault,
    Parameter,
    ShapeError,
    Tensor,
    add,
    backward,
    finite_difference_check,
    linear,
    op_counts,
    relu,
    reset_op_counts,
    sgd_momentum_step,
    weighted_sum,
)


class TestBackward:
    def test_shared_input_accumulates_both_adjoints(self):
        """A tensor feeding two loss terms receives the exact sum of adjoints."""
        x = Tensor(np.ones((2, 2)), requires_grad=True)
        a = np.array([[1.0, 2.0], [3.0, 4.0]])
        b = np.array([[10.0, 20.0], [30.0, 40.0]])
        backward(add(weighted_sum(x, a), weighted_sum(x, b)))
        np.testing.assert_allclose(x.grad, a + b, atol=1e-12)

    def test_diamond_graph_accumulates_through_paths(self):
        x = Tensor(np.array([2.0]), requires_grad=True)
        y = relu(x)
        backward(add(weighted_sum(y, np.array([3.0])), weighted_sum(y, np.array([5.0]))))
        assert x.grad[0] == pytest.approx(8.0, abs=1e-12)

    def test_non_scalar_backward_raises(self):
        x = Tensor(np.ones((2, 2)), requires_grad=True)
        with pytest.raises(ShapeError, match="scalar"):
            backward(relu(x))

    def test_disconnected_parameter_keeps_zero_gradient(self):
        p = Parameter(np.ones(3), name="idle")
        x = Tensor(np.ones(2), requires_grad=True)
        backward(weighted_sum(x, np.ones(2)))
        np.testing.assert_allclose(p.grad, 0.0)

    def test_repeated_backward_accumulates_into_leaves(self):
        x = Tensor(np.ones(2), requires_grad=True)
        w = np.array([1.0, 2.0])
        backward(weighted_sum(x, w))
        backward(weighted_sum(x, w))
        np.testing.assert_allclose(x.grad, 2 * w)

    def test_op_count_probe(self):
        reset_op_counts()
        x = Tensor(np.ones((2, 3)))
        relu(relu(x))
        linear(x, Tensor(np.ones((4, 3))), Tensor(np.zeros(4)))
        counts = op_counts()
        assert counts["relu"] == 2 and counts["linear"] == 1


class TestParameter:
    def test_freeze_couples_multiplier_and_trainable(self):
        p = Parameter(np.ones(2))
        assert p.trainable
        p.freeze()
        assert p.lr_multiplier == 0.0 and not p.trainable
        p.lr_multiplier = 0.2
        assert p.trainable

    def test_negative_multiplier_rejected(self):
        p = Parameter(np.ones(1))
        with pytest.raises(ValueError):
            p.lr_multiplier = -0.1

    def test_momentum_buffer_starts_zero(self):
        p = Parameter(np.random.default_rng(0).standard_normal((3, 3)))
        np.testing.assert_allclose(p.momentum_buffer, 0.0)


class TestSgdMomentum:
    def test_two_step_displacement_matches_hand_unroll(self):
        """Constant gradient g, momentum 0.9: displacement lr*g*(1 + 1.9)."""
        p = Parameter(np.array([1.0]))
        for _ in range(2):
            p.tensor.grad = np.array([2.0])
            sgd_momentum_step([p], lr=0.1, momentum=0.9)
        assert p.data[0] == pytest.approx(1.0 - 0.1 * 2.0 * (1.0 + 1.9), abs=1e-12)

    def test_multiplier_scales_step(self):
        p = Parameter(np.array([0.0]))
        p.lr_multiplier = 0.2
        p.tensor.grad = np.array([1.0])
        sgd_momentum_step([p], lr=0.1, momentum=0.9)
        assert p.data[0] == pytest.approx(-0.1 * 0.2, abs=1e-15)

    def test_frozen_parameter_is_bit_identical_after_many_steps(self):
        rng = np.random.default_rng(7)
        p = Parameter(rng.standard_normal((4, 4)))
        before = p.data.tobytes()
        p.freeze()
        for _ in range(100):
            p.tensor.grad = rng.standard_normal((4, 4))
            sgd_momentum_step([p], lr=0.5, momentum=0.9)
        assert p.data.tobytes() == before
        assert p.momentum_buffer.tobytes() == np.zeros((4, 4)).tobytes()

    def test_step_clears_gradients(self):
        p = Parameter(np.ones(2))
        p.tensor.grad = np.ones(2)
        sgd_momentum_step([p], lr=0.1)
        np.testing.assert_allclose(p.grad, 0.0)

    def test_nan_gradient_aborts_with_fault(self):
        p = Parameter(np.ones(2), name="w3")
        p.tensor.grad = np.array([1.0, np.nan])
        with pytest.raises(NumericFault, match="w3"):
            sgd_momentum_step([p], lr=0.1)

    def test_missing_gradient_is_an_error(self):
        p = Parameter(np.ones(2))
        p.tensor.grad = None
        with pytest.raises(ValueError, match="gradient"):
            sgd_momentum_step([p], lr=0.1)


class TestFiniteDifferenceCheck:
    def test_linear_function_has_vanishing_error(self):
        c = np.array([1.0, -2.0, 3.0])

        def fn(x):
            return float(c @ x), c.copy()

        err = finite_difference_check(fn, np.array([0.3, -0.7, 1.1]))
        assert err < 1e-9

    def test_quadratic_function_error_below_1e6(self):
        def fn(x):
            return float(x @ x), 2 * x

        err = finite_difference_check(fn, np.array([0.5, -1.5, 2.0]), step=1e-5)
        assert err < 1e-6

    def test_wrong_gradient_is_flagged_with_error_near_one(self):
        def fn(x):
            return float(x @ x), np.zeros_like(x)  # claims zero gradient

        err = finite_difference_check(fn, np.array([1.0, 2.0]))
        assert err == pytest.approx(1.0, abs=1e-3)
