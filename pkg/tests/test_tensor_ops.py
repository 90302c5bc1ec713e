"""Kernel-level forward values and gradient checks."""

import numpy as np
import pytest

from esrnet.autograd import (
    NumericFault,
    ShapeError,
    Tensor,
    add,
    backward,
    batchnorm2d,
    check_finite,
    conv2d,
    conv_output_size,
    global_avg_pool,
    linear,
    maxpool2d,
    relu,
    rmse_loss,
    softmax_cross_entropy,
    weighted_sum,
)
from _helpers import fd_error, project


def t4(arr):
    return Tensor(np.asarray(arr, dtype=np.float64))


class TestConv2d:
    def test_all_ones_kernel_sums_window(self):
        """[[1,2],[3,4]] under a 2x2 ones kernel gives [[10]]."""
        x = t4([[[[1.0, 2.0], [3.0, 4.0]]]])
        w = t4(np.ones((1, 1, 2, 2)))
        b = t4([0.0])
        out = conv2d(x, w, b)
        assert out.shape == (1, 1, 1, 1)
        assert out.data[0, 0, 0, 0] == pytest.approx(10.0, abs=1e-12)

    def test_identity_kernel_reproduces_input(self):
        """A 1x1 kernel of value 1 is the identity map."""
        rng = np.random.default_rng(0)
        x = rng.standard_normal((2, 3, 5, 5))
        out = conv2d(t4(x), t4(np.ones((3, 3, 1, 1)) * np.eye(3)[:, :, None, None]), t4(np.zeros(3)))
        np.testing.assert_allclose(out.data, x, atol=1e-12)

    def test_bias_added_per_channel(self):
        x = t4(np.zeros((1, 1, 3, 3)))
        out = conv2d(x, t4(np.zeros((2, 1, 3, 3))), t4([1.5, -2.0]), padding=1)
        assert np.all(out.data[0, 0] == 1.5)
        assert np.all(out.data[0, 1] == -2.0)

    @pytest.mark.parametrize("size,kernel,stride,padding", [
        (7, 3, 1, 0), (7, 3, 2, 1), (8, 2, 2, 0), (9, 5, 1, 2), (6, 3, 3, 0), (5, 5, 1, 0),
    ])
    def test_output_shape_follows_floor_formula(self, size, kernel, stride, padding):
        expect = (size + 2 * padding - kernel) // stride + 1
        assert conv_output_size(size, kernel, stride, padding) == expect
        out = conv2d(
            t4(np.zeros((1, 1, size, size))),
            t4(np.zeros((1, 1, kernel, kernel))),
            t4([0.0]),
            stride=stride,
            padding=padding,
        )
        assert out.shape == (1, 1, expect, expect)

    def test_kernel_exceeding_padded_extent_raises(self):
        with pytest.raises(ShapeError):
            conv2d(t4(np.zeros((1, 1, 2, 2))), t4(np.zeros((1, 1, 5, 5))), t4([0.0]))

    def test_channel_mismatch_names_dimension(self):
        with pytest.raises(ShapeError, match="channels"):
            conv2d(t4(np.zeros((1, 3, 4, 4))), t4(np.zeros((2, 4, 3, 3))), t4(np.zeros(2)))

    @pytest.mark.parametrize("seed", range(5))
    def test_gradients_match_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        x = rng.standard_normal((2, 3, 6, 6))
        w = rng.standard_normal((4, 3, 3, 3)) * 0.5
        b = rng.standard_normal(4) * 0.1

        err_x = fd_error(lambda t: project(conv2d(t, t4(w), t4(b), stride=2, padding=1), seed), x)
        err_w = fd_error(lambda t: project(conv2d(t4(x), t, t4(b), stride=2, padding=1), seed), w)
        err_b = fd_error(lambda t: project(conv2d(t4(x), t4(w), t, stride=2, padding=1), seed), b)
        assert err_x < 1e-4 and err_w < 1e-4 and err_b < 1e-4

    def test_overlapping_windows_accumulate_input_gradient(self):
        """stride < kernel makes windows overlap; col2im must sum, not overwrite."""
        x = Tensor(np.random.default_rng(1).standard_normal((1, 1, 4, 4)), requires_grad=True)
        out = conv2d(x, t4(np.ones((1, 1, 3, 3))), t4([0.0]), stride=1, padding=0)
        backward(weighted_sum(out, np.ones(out.shape)))
        # the center 2x2 of a 4x4 input is covered by all four 3x3 windows
        assert x.grad[0, 0, 1, 1] == pytest.approx(4.0)
        assert x.grad[0, 0, 0, 0] == pytest.approx(1.0)


class TestBatchNorm2d:
    def test_normalizes_batch_statistics(self):
        rng = np.random.default_rng(3)
        x = rng.standard_normal((4, 2, 5, 5)) * 3.0 + 7.0
        rm, rv = np.zeros(2), np.ones(2)
        out = batchnorm2d(t4(x), t4(np.ones(2)), t4(np.zeros(2)), rm, rv, "train")
        assert out.data.mean(axis=(0, 2, 3)) == pytest.approx(np.zeros(2), abs=1e-10)
        assert out.data.var(axis=(0, 2, 3)) == pytest.approx(np.ones(2), abs=1e-3)

    def test_constant_channel_maps_to_beta(self):
        """Zero variance is absorbed by eps; gamma=1, beta=0 yields zeros."""
        x = t4(np.full((2, 1, 3, 3), 5.0))
        out = batchnorm2d(x, t4([1.0]), t4([0.0]), np.zeros(1), np.ones(1), "train")
        np.testing.assert_allclose(out.data, 0.0, atol=1e-12)

    def test_running_stats_update_rule(self):
        rng = np.random.default_rng(4)
        x = rng.standard_normal((2, 3, 4, 4))
        rm, rv = np.zeros(3), np.ones(3)
        batchnorm2d(t4(x), t4(np.ones(3)), t4(np.zeros(3)), rm, rv, "train", momentum=0.1)
        m = x.shape[0] * x.shape[2] * x.shape[3]
        np.testing.assert_allclose(rm, 0.1 * x.mean(axis=(0, 2, 3)), atol=1e-12)
        np.testing.assert_allclose(
            rv, 0.9 + 0.1 * x.var(axis=(0, 2, 3)) * m / (m - 1), atol=1e-12
        )

    def test_eval_mode_uses_running_stats_and_keeps_them(self):
        rng = np.random.default_rng(5)
        x = rng.standard_normal((2, 2, 3, 3))
        rm, rv = np.array([1.0, -1.0]), np.array([4.0, 0.25])
        out = batchnorm2d(t4(x), t4([1.0, 1.0]), t4([0.0, 0.0]), rm, rv, "eval")
        expect = (x - rm.reshape(1, 2, 1, 1)) / np.sqrt(rv.reshape(1, 2, 1, 1) + 1e-5)
        np.testing.assert_allclose(out.data, expect, atol=1e-12)
        np.testing.assert_allclose(rm, [1.0, -1.0])
        np.testing.assert_allclose(rv, [4.0, 0.25])

    def test_single_element_train_batch_raises(self):
        with pytest.raises(ShapeError, match="N\\*H\\*W"):
            batchnorm2d(t4(np.ones((1, 2, 1, 1))), t4(np.ones(2)), t4(np.zeros(2)),
                        np.zeros(2), np.ones(2), "train")

    @pytest.mark.parametrize("mode", ["train", "eval"])
    @pytest.mark.parametrize("seed", range(3))
    def test_gradients_match_finite_differences(self, mode, seed):
        rng = np.random.default_rng(seed)
        x = rng.standard_normal((3, 2, 4, 4))
        g = rng.standard_normal(2) * 0.5 + 1.0
        be = rng.standard_normal(2) * 0.2
        rm, rv = rng.standard_normal(2) * 0.1, rng.random(2) + 0.5

        def run(xt, gt, bt):
            return batchnorm2d(xt, gt, bt, rm.copy(), rv.copy(), mode)

        err_x = fd_error(lambda t: project(run(t, t4(g), t4(be)), seed), x)
        err_g = fd_error(lambda t: project(run(t4(x), t, t4(be)), seed), g)
        err_b = fd_error(lambda t: project(run(t4(x), t4(g), t), seed), be)
        assert err_x < 1e-4 and err_g < 1e-4 and err_b < 1e-4


class TestMaxPool2d:
    def test_window_maximum(self):
        out = maxpool2d(t4([[[[1.0, 2.0], [3.0, 4.0]]]]), kernel=2, stride=2)
        assert out.shape == (1, 1, 1, 1)
        assert out.data[0, 0, 0, 0] == 4.0

    def test_tie_routes_gradient_to_first_occurrence(self):
        x = Tensor(np.ones((1, 1, 2, 2)), requires_grad=True)
        out = maxpool2d(x, kernel=2, stride=2)
        backward(weighted_sum(out, np.ones(out.shape)))
        np.testing.assert_allclose(x.grad, [[[[1.0, 0.0], [0.0, 0.0]]]])

    def test_kernel_larger_than_input_raises(self):
        with pytest.raises(ShapeError, match="larger"):
            maxpool2d(t4(np.zeros((1, 1, 2, 2))), kernel=3, stride=1)

    @pytest.mark.parametrize("kernel,stride", [(2, 2), (3, 1), (2, 1), (3, 3)])
    @pytest.mark.parametrize("seed", range(3))
    def test_gradients_match_finite_differences(self, kernel, stride, seed):
        # distinct values keep argmax stable under the FD perturbation
        rng = np.random.default_rng(seed)
        x = rng.permutation(6 * 6 * 2).reshape(1, 2, 6, 6).astype(np.float64)
        err = fd_error(lambda t: project(maxpool2d(t, kernel, stride), seed), x)
        assert err < 1e-4


class TestGlobalAvgPool:
    def test_forward_is_spatial_mean(self):
        rng = np.random.default_rng(6)
        x = rng.standard_normal((2, 3, 4, 5))
        out = global_avg_pool(t4(x))
        np.testing.assert_allclose(out.data, x.mean(axis=(2, 3)), atol=1e-12)

    def test_one_by_one_input_passes_through(self):
        x = t4(np.arange(6, dtype=np.float64).reshape(2, 3, 1, 1))
        np.testing.assert_allclose(global_avg_pool(x).data, x.data[:, :, 0, 0])

    def test_gradient_is_inverse_area(self):
        x = Tensor(np.zeros((1, 1, 2, 2)), requires_grad=True)
        backward(weighted_sum(global_avg_pool(x), np.ones((1, 1))))
        np.testing.assert_allclose(x.grad, np.full((1, 1, 2, 2), 0.25), atol=1e-15)


class TestLinear:
    def test_forward_hand_case(self):
        out = linear(t4([[1.0, 2.0]]), t4([[1.0, 1.0], [2.0, -1.0]]), t4([0.5, -0.5]))
        np.testing.assert_allclose(out.data, [[3.5, -0.5]], atol=1e-12)

    def test_feature_mismatch_raises(self):
        with pytest.raises(ShapeError, match="features"):
            linear(t4(np.zeros((2, 3))), t4(np.zeros((4, 5))), t4(np.zeros(4)))

    @pytest.mark.parametrize("seed", range(5))
    def test_gradients_match_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        x = rng.standard_normal((4, 6))
        w = rng.standard_normal((3, 6))
        b = rng.standard_normal(3)
        err_x = fd_error(lambda t: project(linear(t, t4(w), t4(b)), seed), x)
        err_w = fd_error(lambda t: project(linear(t4(x), t, t4(b)), seed), w)
        err_b = fd_error(lambda t: project(linear(t4(x), t4(w), t), seed), b)
        assert err_x < 1e-4 and err_w < 1e-4 and err_b < 1e-4


class TestRelu:
    def test_forward_and_subgradient_at_zero(self):
        x = Tensor(np.array([-1.0, 0.0, 2.0]), requires_grad=True)
        out = relu(x)
        np.testing.assert_allclose(out.data, [0.0, 0.0, 2.0])
        backward(weighted_sum(out, np.ones(3)))
        np.testing.assert_allclose(x.grad, [0.0, 0.0, 1.0])  # exact zero at the kink

    @pytest.mark.parametrize("seed", range(3))
    def test_gradients_match_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        x = rng.standard_normal((3, 7)) + 0.05  # keep coordinates away from the kink
        x[np.abs(x) < 1e-3] = 0.5
        assert fd_error(lambda t: project(relu(t), seed), x) < 1e-4


class TestSoftmaxCrossEntropy:
    def test_uniform_logits_give_log_of_class_count(self):
        logits = t4(np.zeros((4, 8)))
        loss = softmax_cross_entropy(logits, np.array([0, 3, 5, 7]))
        assert loss.item() == pytest.approx(np.log(8.0), abs=1e-12)

    def test_large_logits_stay_finite(self):
        logits = t4(np.array([[1000.0, 0.0, -1000.0]]))
        loss = softmax_cross_entropy(logits, np.array([0]))
        assert np.isfinite(loss.item())
        assert loss.item() == pytest.approx(0.0, abs=1e-12)

    def test_label_out_of_range_raises(self):
        with pytest.raises(ShapeError, match="out of range"):
            softmax_cross_entropy(t4(np.zeros((2, 3))), np.array([0, 3]))

    @pytest.mark.parametrize("seed", range(5))
    def test_gradients_match_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        logits = rng.standard_normal((5, 8)) * 2.0
        labels = rng.integers(0, 8, size=5)
        err = fd_error(lambda t: softmax_cross_entropy(t, labels), logits)
        assert err < 1e-4


class TestRmseLoss:
    def test_known_value(self):
        pred = t4(np.array([[1.0, 2.0], [3.0, 4.0]]))
        target = np.array([[0.0, 2.0], [3.0, 2.0]])
        # squared errors (1, 0, 0, 4) -> mean 1.25 -> sqrt
        loss = rmse_loss(pred, target)
        assert loss.item() == pytest.approx(np.sqrt(1.25), abs=1e-12)

    def test_exact_fit_gives_zero_loss_and_zero_gradient(self):
        pred = Tensor(np.ones((3, 2)), requires_grad=True)
        loss = rmse_loss(pred, np.ones((3, 2)))
        assert loss.item() == 0.0
        backward(loss)
        np.testing.assert_allclose(pred.grad, 0.0)

    def test_shape_mismatch_raises(self):
        with pytest.raises(ShapeError):
            rmse_loss(t4(np.zeros((2, 2))), np.zeros((2, 3)))

    @pytest.mark.parametrize("seed", range(5))
    def test_gradients_match_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        pred = rng.standard_normal((4, 2))
        target = rng.standard_normal((4, 2))
        assert fd_error(lambda t: rmse_loss(t, target), pred) < 1e-4


class TestPlumbingOps:
    def test_add_requires_matching_shapes(self):
        with pytest.raises(ShapeError):
            add(t4(np.zeros(2)), t4(np.zeros(3)))

    def test_add_passes_gradient_to_both_sides(self):
        a = Tensor(np.array(1.0), requires_grad=True)
        b = Tensor(np.array(2.0), requires_grad=True)
        backward(add(a, b))
        assert a.grad == 1.0 and b.grad == 1.0

    def test_weighted_sum_gradient_is_weights(self):
        x = Tensor(np.zeros((2, 2)), requires_grad=True)
        w = np.array([[1.0, -2.0], [3.0, 0.5]])
        backward(weighted_sum(x, w))
        np.testing.assert_allclose(x.grad, w)

    def test_check_finite_raises_on_nan(self):
        with pytest.raises(NumericFault):
            check_finite(Tensor(np.array([1.0, np.nan])))
