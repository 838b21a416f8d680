"""Forward semantics, shape errors and graph bookkeeping of the numcore primitives"""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from beamcast.errors import ConfigurationError, DimensionError, LabelRangeError, TrainingError
from beamcast.numcore import (
    BatchNormStats,
    Tensor,
    batchnorm2d,
    concat,
    conv2d,
    cross_entropy,
    default_dtype,
    dropout,
    get_default_dtype,
    layernorm,
    matmul,
    maxpool2d,
    no_grad,
    relu,
    softmax,
)

F64 = np.float64
finite = st.floats(min_value=-50, max_value=50, allow_nan=False, allow_infinity=False)


def t64(data, requires_grad=False):
    return Tensor(np.asarray(data, dtype=F64), requires_grad=requires_grad, dtype=F64)


class TestTensor:
    def test_default_dtype_is_float32(self):
        assert Tensor([1.0, 2.0]).dtype == np.float32

    def test_default_dtype_context_restores(self):
        with default_dtype(np.float64):
            assert Tensor([1.0]).dtype == np.float64
        assert get_default_dtype() == np.float32

    def test_broadcast_add_gradient_is_summed(self):
        x = t64(np.ones((3, 4)), requires_grad=True)
        b = t64(np.zeros(4), requires_grad=True)
        (x + b).sum().backward()
        np.testing.assert_array_equal(b.grad, np.full(4, 3.0))
        np.testing.assert_array_equal(x.grad, np.ones((3, 4)))

    def test_shared_input_accumulates(self):
        x = t64([2.0, -1.0], requires_grad=True)
        (x * x).sum().backward()
        np.testing.assert_array_equal(x.grad, [4.0, -2.0])

    def test_no_grad_records_nothing(self):
        x = t64([1.0], requires_grad=True)
        with no_grad():
            y = x * 3.0
        assert not y.requires_grad

    def test_second_backward_raises(self):
        x = t64([1.0, 2.0], requires_grad=True)
        loss = (x * x).sum()
        loss.backward()
        with pytest.raises(TrainingError):
            loss.backward()

    def test_backward_needs_grad(self):
        with pytest.raises(TrainingError):
            t64([1.0]).sum().backward()

    def test_item(self):
        assert t64([[2.5]]).item() == 2.5
        with pytest.raises(DimensionError, match=r"\[2\]"):
            t64([1.0, 2.0]).item()


class TestMatmul:
    def test_identity(self):
        b = np.arange(6.0).reshape(3, 2)
        np.testing.assert_array_equal(matmul(t64(np.eye(3)), t64(b)).data, b)

    def test_direct_arithmetic(self):
        out = matmul(t64([[1, 2], [3, 4]]), t64([[1], [1]]))
        np.testing.assert_array_equal(out.data, [[3], [7]])

    def test_batched_broadcast(self):
        a = t64(np.ones((2, 5, 3)))
        w = t64(np.ones((3, 4)))
        assert matmul(a, w).shape == (2, 5, 4)

    def test_mismatch_names_both_shapes(self):
        with pytest.raises(DimensionError, match=r"\[2, 3\].*\[2, 3\]"):
            matmul(t64(np.ones((2, 3))), t64(np.ones((2, 3))))


class TestConv2d:
    def test_center_delta_kernel_is_identity(self, rng):
        channels = 2
        kernels = np.zeros((channels, channels, 3, 3))
        for c in range(channels):
            kernels[c, c, 1, 1] = 1.0
        x = rng.standard_normal((channels, 5, 5))
        out = conv2d(t64(x), t64(kernels), t64(np.zeros(channels)))
        np.testing.assert_allclose(out.data, x)

    def test_zero_kernel_gives_bias(self, rng):
        x = rng.standard_normal((1, 3, 4, 4))
        bias = np.array([0.5, -2.0])
        out = conv2d(t64(x), t64(np.zeros((2, 3, 3, 3))), t64(bias))
        assert out.shape == (1, 2, 4, 4)
        np.testing.assert_array_equal(out.data[0, 0], 0.5)
        np.testing.assert_array_equal(out.data[0, 1], -2.0)

    def test_matches_direct_loop(self, rng):
        x = rng.standard_normal((2, 3, 4, 5))
        k = rng.standard_normal((4, 3, 3, 3))
        b = rng.standard_normal(4)
        padded = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
        expected = np.zeros((2, 4, 4, 5))
        for n in range(2):
            for o in range(4):
                for i in range(4):
                    for j in range(5):
                        expected[n, o, i, j] = np.sum(padded[n, :, i : i + 3, j : j + 3] * k[o]) + b[o]
        np.testing.assert_allclose(conv2d(t64(x), t64(k), t64(b)).data, expected, rtol=1e-10, atol=1e-12)

    def test_channel_mismatch(self):
        with pytest.raises(DimensionError):
            conv2d(t64(np.zeros((2, 4, 4))), t64(np.zeros((1, 3, 3, 3))), t64(np.zeros(1)))


class TestMaxPool:
    def test_direct_max(self):
        out = maxpool2d(t64([[[1, 2], [3, 4]]]))
        np.testing.assert_array_equal(out.data, [[[4]]])

    def test_constant_input(self):
        out = maxpool2d(t64(np.full((2, 4, 6), 7.0)))
        assert out.shape == (2, 2, 3)
        np.testing.assert_array_equal(out.data, 7.0)

    def test_odd_size_rejected(self):
        with pytest.raises(DimensionError):
            maxpool2d(t64(np.zeros((1, 3, 4))))

    def test_tie_gradient_goes_to_first_element(self):
        x = t64(np.ones((1, 2, 2)), requires_grad=True)
        maxpool2d(x).sum().backward()
        np.testing.assert_array_equal(x.grad, [[[1, 0], [0, 0]]])


class TestNormalization:
    def test_softmax_uniform(self):
        np.testing.assert_array_equal(softmax(t64([0, 0, 0, 0])).data, [0.25] * 4)

    @settings(max_examples=50, deadline=None)
    @given(arrays(F64, (3, 5), elements=finite))
    def test_softmax_rows_sum_to_one(self, x):
        out = softmax(t64(x)).data
        assert np.all(out >= 0)
        np.testing.assert_allclose(out.sum(axis=-1), 1.0, rtol=1e-12)

    def test_layernorm_constant_vector_is_zero(self):
        out = layernorm(t64(np.full((2, 6), 3.5)), t64(np.ones(6)), t64(np.zeros(6)))
        np.testing.assert_array_equal(out.data, 0.0)

    def test_layernorm_rejects_nonpositive_eps(self):
        with pytest.raises(ConfigurationError):
            layernorm(t64(np.ones(4)), t64(np.ones(4)), t64(np.zeros(4)), eps=0.0)

    def test_batchnorm_updates_running_stats(self, rng):
        x = rng.standard_normal((2, 3, 4, 4)) * 2.0 + 1.0
        stats = BatchNormStats.create(3, F64)
        batchnorm2d(t64(x), t64(np.ones(3)), t64(np.zeros(3)), stats, train=True)
        np.testing.assert_allclose(stats.running_mean, 0.1 * x.mean(axis=(0, 2, 3)))
        np.testing.assert_allclose(stats.running_var, 0.9 + 0.1 * x.var(axis=(0, 2, 3), ddof=1))

    def test_batchnorm_train_output_is_standardized(self, rng):
        x = rng.standard_normal((4, 2, 3, 3)) * 5.0 - 2.0
        out = batchnorm2d(t64(x), t64(np.ones(2)), t64(np.zeros(2)), BatchNormStats.create(2, F64), train=True)
        np.testing.assert_allclose(out.data.mean(axis=(0, 2, 3)), 0.0, atol=1e-10)
        np.testing.assert_allclose(out.data.var(axis=(0, 2, 3)), 1.0, rtol=1e-3)

    def test_batchnorm_eval_independent_of_batch(self, rng):
        stats = BatchNormStats(rng.standard_normal(2), rng.uniform(0.5, 2.0, 2))
        gamma, beta = t64(rng.standard_normal(2)), t64(rng.standard_normal(2))
        x = rng.standard_normal((3, 2, 4, 4))
        full = batchnorm2d(t64(x), gamma, beta, stats, train=False).data
        single = batchnorm2d(t64(x[1]), gamma, beta, stats, train=False).data
        np.testing.assert_allclose(full[1], single)


class TestActivations:
    @settings(max_examples=50, deadline=None)
    @given(arrays(F64, 16, elements=finite))
    def test_relu_splits_sign(self, x):
        pos, neg = relu(t64(x)).data, relu(t64(-x)).data
        assert np.all(pos * neg == 0)
        np.testing.assert_array_equal(pos - neg, x)

    def test_dropout_eval_is_identity(self):
        x = t64(np.ones(10))
        assert dropout(x, 0.5, train=False, rng=None) is x

    def test_dropout_train_scales_survivors(self, rng):
        out = dropout(t64(np.ones(4000)), 0.5, train=True, rng=rng).data
        assert set(np.unique(out)) <= {0.0, 2.0}
        assert abs(out.mean() - 1.0) < 0.1

    def test_dropout_rate_range(self):
        with pytest.raises(ConfigurationError):
            dropout(t64(np.ones(3)), 1.0, train=True, rng=np.random.default_rng(0))

    def test_concat_widths(self):
        out = concat([t64(np.ones((2, 3))), t64(np.zeros((2, 5)))], axis=-1)
        assert out.shape == (2, 8)


class TestCrossEntropy:
    def test_uniform_logits(self):
        loss = cross_entropy(t64(np.zeros((1, 64))), [17])
        assert loss.item() == pytest.approx(math.log(64), rel=1e-12)

    def test_saturated_margin(self):
        logits = np.zeros((2, 4))
        logits[0, 1] = logits[1, 3] = 1e3
        assert cross_entropy(t64(logits), [1, 3]).item() == pytest.approx(0.0, abs=1e-12)

    def test_label_out_of_range(self):
        with pytest.raises(LabelRangeError):
            cross_entropy(t64(np.zeros((2, 4))), [0, 4])
        with pytest.raises(IndexError):
            cross_entropy(t64(np.zeros((1, 4))), [-1])

    def test_gradient_is_softmax_minus_onehot(self):
        logits = t64([[1.0, 2.0, 0.5]], requires_grad=True)
        cross_entropy(logits, [1]).backward()
        probs = np.exp([1.0, 2.0, 0.5]) / np.exp([1.0, 2.0, 0.5]).sum()
        np.testing.assert_allclose(logits.grad[0], probs - np.array([0, 1, 0]))
