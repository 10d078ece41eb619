import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from metricverify.exceptions import ConfigurationError, DimensionError, NumericError
from metricverify.tensor import (
    BatchNorm,
    BatchNormParams,
    Conv1x1,
    Conv1x1Params,
    Dropout,
    Linear,
    LinearParams,
    ReLU,
    RngStream,
    conv1x1,
    finite_difference_check,
    linear,
    linear_backward,
    relu,
    softmax_probs,
)


def scalar_probe(layer, x, upstream, training=False):
    """Loss ``sum(upstream * layer(x))`` for finite-difference checks."""
    return float(np.sum(upstream * layer.forward(x, training)))


class TestLinear:
    def test_identity(self):
        out = linear([[1.0, 2.0]], LinearParams(np.eye(2), np.zeros(2)))
        np.testing.assert_array_equal(out, [[1.0, 2.0]])

    def test_hand_value(self):
        out = linear([[1.0, 1.0]], LinearParams([[2.0], [3.0]], [1.0]))
        np.testing.assert_array_equal(out, [[6.0]])

    def test_shape_mismatch_names_shapes(self):
        with pytest.raises(DimensionError, match=r"\(1, 3\).*\(2, 2\)"):
            linear([[1.0, 2.0, 3.0]], LinearParams(np.eye(2), np.zeros(2)))

    def test_params_validate_bias(self):
        with pytest.raises(DimensionError):
            LinearParams(np.eye(2), np.zeros(3))

    @pytest.mark.parametrize("seed", range(5))
    def test_backward_matches_finite_differences(self, seed):
        r = np.random.default_rng(seed)
        x = r.uniform(-1, 1, (3, 4))
        p = LinearParams(r.uniform(-1, 1, (4, 2)), r.uniform(-1, 1, 2))
        up = r.uniform(-1, 1, (3, 2))
        dx, dw, db = linear_backward(x, p, up)
        assert finite_difference_check(lambda z: np.sum(up * linear(z, p)), x, dx) < 1e-4
        w0 = p.weights.copy()

        def f_w(w):
            return np.sum(up * linear(x, LinearParams(w, p.bias)))

        assert finite_difference_check(f_w, w0, dw) < 1e-4
        assert finite_difference_check(
            lambda b: np.sum(up * linear(x, LinearParams(w0, b))), p.bias, db
        ) < 1e-4


class TestRelu:
    def test_sign_cases(self):
        np.testing.assert_array_equal(relu([-1.0, 0.0, 2.0]), [0.0, 0.0, 2.0])

    def test_positive_identity(self):
        x = np.array([0.5, 3.0, 1e-3])
        np.testing.assert_array_equal(relu(x), x)

    def test_backward(self, rng):
        x = rng.uniform(-1, 1, (4, 5))
        x[np.abs(x) < 1e-2] = 0.5
        up = rng.uniform(-1, 1, x.shape)
        layer = ReLU()
        layer.forward(x)
        grad = layer.backward(up)
        assert finite_difference_check(lambda z: scalar_probe(ReLU(), z, up), x, grad) < 1e-4
        np.testing.assert_array_equal(grad[x < 0], 0.0)


class TestConv1x1:
    def test_sum_kernel(self):
        x = np.array([[[1.0, 2.0, 3.0], [10.0, 20.0, 30.0]]])
        out = conv1x1(x, Conv1x1Params([[1.0, 1.0]], [0.0]))
        np.testing.assert_array_equal(out, [[[11.0, 22.0, 33.0]]])

    def test_identity_passthrough_exact(self, rng):
        x = rng.normal(size=(3, 2, 6))
        out = conv1x1(x, Conv1x1Params(np.eye(2), np.zeros(2)))
        np.testing.assert_array_equal(out, x)

    def test_channel_mismatch(self):
        with pytest.raises(DimensionError):
            conv1x1(np.zeros((1, 3, 4)), Conv1x1Params(np.eye(2), np.zeros(2)))

    def test_backward(self, rng):
        x = rng.uniform(-1, 1, (2, 2, 5))
        layer = Conv1x1(Conv1x1Params(rng.uniform(-1, 1, (3, 2)), rng.uniform(-1, 1, 3)))
        up = rng.uniform(-1, 1, (2, 3, 5))
        layer.forward(x)
        dx = layer.backward(up)
        assert finite_difference_check(lambda z: scalar_probe(layer, z, up), x, dx) < 1e-4
        bias = layer.p.bias

        def f_k(k):
            return scalar_probe(Conv1x1(Conv1x1Params(k, bias)), x, up)

        assert finite_difference_check(f_k, layer.p.kernels, layer.grads["kernels"]) < 1e-4


class TestDropout:
    def test_rate_zero_is_identity(self, rng):
        x = rng.normal(size=(4, 3))
        assert Dropout(0.0, RngStream(1, "dropout")).forward(x, training=True) is x

    @pytest.mark.parametrize("rate", [0.0, 0.3, 0.9])
    def test_eval_mode_is_exact_identity(self, rng, rate):
        x = rng.normal(size=(4, 3))
        np.testing.assert_array_equal(Dropout(rate).forward(x, training=False), x)

    def test_mask_replays_reference_stream(self):
        x = np.ones((200, 50))
        out = Dropout(0.5, RngStream(3, "dropout")).forward(x, training=True)
        reference = RngStream(3, "dropout").gen.random(x.shape) >= 0.5
        np.testing.assert_array_equal(out != 0, reference)
        np.testing.assert_array_equal(out[reference], 2.0)
        assert abs(out.mean() - 1.0) < 0.02

    def test_backward_uses_stored_mask(self, rng):
        layer = Dropout(0.4, RngStream(9, "dropout"))
        out = layer.forward(np.ones((5, 5)), training=True)
        np.testing.assert_array_equal(layer.backward(np.ones((5, 5))), out)

    def test_rate_one_rejected(self):
        with pytest.raises(ConfigurationError):
            Dropout(1.0)


class TestBatchNorm:
    def test_constant_batch_gives_beta(self):
        p = BatchNormParams.init(3)
        p.beta[:] = [0.5, -1.0, 2.0]
        out = BatchNorm(p).forward(np.tile([1.0, 2.0, 3.0], (4, 1)), training=True)
        np.testing.assert_allclose(out, np.tile(p.beta, (4, 1)), atol=0, rtol=0)

    def test_standardized_batch_is_unchanged(self):
        # columns with mean 0 and (biased) variance 1
        x = np.array([[1.0, -1.0], [-1.0, 1.0], [1.0, 1.0], [-1.0, -1.0]])
        out = BatchNorm(BatchNormParams.init(2)).forward(x, training=True)
        eps = 1e-5
        np.testing.assert_allclose(out, x / np.sqrt(1 + eps), rtol=1e-12)
        np.testing.assert_allclose(out, x, atol=1e-5)

    def test_running_statistics(self):
        p = BatchNormParams.init(1, momentum=0.9)
        BatchNorm(p).forward(np.array([[1.0], [3.0]]), training=True)
        np.testing.assert_allclose(p.running_mean, [0.2])
        np.testing.assert_allclose(p.running_var, [0.9 + 0.1 * 1.0])

    def test_eval_uses_running_statistics(self):
        p = BatchNormParams.init(1)
        p.running_mean[:] = 2.0
        p.running_var[:] = 4.0 - p.epsilon
        out = BatchNorm(p).forward(np.array([[6.0]]), training=False)
        np.testing.assert_allclose(out, [[2.0]])

    def test_batch_of_one_rejected_in_training(self):
        with pytest.raises(DimensionError):
            BatchNorm(BatchNormParams.init(2)).forward(np.zeros((1, 2)), training=True)

    def test_invalid_params(self):
        with pytest.raises(ConfigurationError):
            BatchNormParams.init(2, epsilon=0.0)

    @pytest.mark.parametrize("seed", range(5))
    def test_backward(self, seed):
        r = np.random.default_rng(seed)
        x = r.uniform(-1, 1, (4, 3))
        p = BatchNormParams(r.uniform(0.5, 1.5, 3), r.uniform(-1, 1, 3), np.zeros(3), np.ones(3))
        up = r.uniform(-1, 1, (4, 3))

        def f(z):
            q = BatchNormParams(p.gamma, p.beta, np.zeros(3), np.ones(3))
            return scalar_probe(BatchNorm(q), z, up, training=True)

        layer = BatchNorm(BatchNormParams(p.gamma, p.beta, np.zeros(3), np.ones(3)))
        layer.forward(x, training=True)
        dx = layer.backward(up)
        assert finite_difference_check(f, x, dx) < 1e-3


class TestSoftmax:
    def test_uniform(self):
        np.testing.assert_allclose(softmax_probs([0.0, 0.0]), [[0.5, 0.5]])

    def test_hand_value(self):
        np.testing.assert_allclose(softmax_probs([np.log(2), 0.0]), [[2 / 3, 1 / 3]], rtol=1e-12)

    def test_overflow_safe(self):
        p = softmax_probs([[1000.0, 0.0], [-1000.0, -1000.0]])
        assert np.all(np.isfinite(p))
        np.testing.assert_allclose(p, [[1.0, 0.0], [0.5, 0.5]])

    @given(
        arrays(np.float64, (3, 4), elements=st.floats(-50, 50)),
        st.floats(-1e3, 1e3),
    )
    def test_rows_sum_to_one_and_shift_invariant(self, z, c):
        p = softmax_probs(z)
        assert np.all(p >= 0)
        np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-6)
        np.testing.assert_allclose(softmax_probs(z + c), p, atol=1e-9)


class TestFiniteDifferenceCheck:
    def test_quadratic(self, rng):
        x = rng.uniform(-1, 1, 6)
        assert finite_difference_check(lambda z: np.sum(z**2), x, 2 * x, eps=1e-3) < 1e-6

    def test_constant(self, rng):
        x = rng.uniform(-1, 1, 4)
        assert finite_difference_check(lambda z: 3.0, x, np.zeros(4)) == 0.0

    def test_wrong_gradient_detected(self, rng):
        x = rng.uniform(0.1, 1, 5)
        err = finite_difference_check(lambda z: np.sum(z**2), x, 3 * x)
        assert err == pytest.approx(1 / 3, abs=1e-6)

    def test_non_finite_function(self):
        with pytest.raises(NumericError):
            finite_difference_check(lambda z: np.inf, np.zeros(2), np.zeros(2))


class TestRngStream:
    def test_replay(self):
        a = RngStream(5, "sampler").gen.random(10)
        b = RngStream(5, "sampler").gen.random(10)
        np.testing.assert_array_equal(a, b)

    def test_streams_differ(self):
        a = RngStream(5, "sampler").gen.random(10)
        b = RngStream(5, "dropout").gen.random(10)
        c = RngStream(6, "sampler").gen.random(10)
        assert not np.array_equal(a, b)
        assert not np.array_equal(a, c)

    def test_custom_label(self):
        np.testing.assert_array_equal(
            RngStream(1, "pair-sampler").gen.random(3), RngStream(1, "pair-sampler").fresh().gen.random(3)
        )


def test_sequential_determinism(stream):
    x = np.random.default_rng(0).normal(size=(3, 4))
    outs = []
    for _ in range(2):
        layer = Linear.init(4, 2, RngStream(7, "init"))
        outs.append(layer.forward(x))
    np.testing.assert_array_equal(*outs)
