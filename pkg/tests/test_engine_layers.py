import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from shapebias.engine import (
    ShapeMismatch,
    batchnorm2d,
    conv2d,
    conv_output_extent,
    dense,
    flatten,
    global_avg_pool,
    maxpool2d,
    maxpool2d_backward,
    relu,
    relu_backward,
    softmax_cross_entropy,
    softmax_cross_entropy_backward,
)


# --- independent oracles ----------------------------------------------------

def conv2d_loops(x, w, b, stride=1, pad=0):
    """Nested-loop direct cross-correlation."""
    n, c, h, wd = x.shape
    o, _, k, _ = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    oh = (h + 2 * pad - k) // stride + 1
    ow = (wd + 2 * pad - k) // stride + 1
    y = np.zeros((n, o, oh, ow))
    for ni in range(n):
        for oi in range(o):
            for yi in range(oh):
                for xi in range(ow):
                    acc = b[oi]
                    for ci in range(c):
                        for kh in range(k):
                            for kw in range(k):
                                acc += xp[ni, ci, yi * stride + kh, xi * stride + kw] * w[oi, ci, kh, kw]
                    y[ni, oi, yi, xi] = acc
    return y


def maxpool_scan(x, window, stride):
    """Exhaustive per-window scan."""
    n, c, h, w = x.shape
    oh = (h - window) // stride + 1
    ow = (w - window) // stride + 1
    y = np.zeros((n, c, oh, ow))
    for ni in range(n):
        for ci in range(c):
            for yi in range(oh):
                for xi in range(ow):
                    y[ni, ci, yi, xi] = x[
                        ni, ci, yi * stride : yi * stride + window, xi * stride : xi * stride + window
                    ].max()
    return y


def matmul_loops(a, b):
    n, d = a.shape
    _, m = b.shape
    out = np.zeros((n, m))
    for i in range(n):
        for j in range(m):
            for k in range(d):
                out[i, j] += a[i, k] * b[k, j]
    return out


# --- conv2d -----------------------------------------------------------------

class TestConv2d:
    def test_identity_kernel(self):
        x = np.random.default_rng(0).random((2, 3, 5, 5))
        w = np.zeros((3, 3, 1, 1))
        for i in range(3):
            w[i, i, 0, 0] = 1.0
        y, _ = conv2d(x, w, np.zeros(3))
        np.testing.assert_allclose(y, x)

    def test_all_ones_3x3(self):
        x = np.arange(1, 10, dtype=np.float64).reshape(1, 1, 3, 3)
        y, _ = conv2d(x, np.ones((1, 1, 3, 3)), np.zeros(1))
        assert y.shape == (1, 1, 1, 1)
        assert y[0, 0, 0, 0] == 45.0

    def test_output_extent(self):
        x = np.zeros((1, 3, 32, 32), dtype=np.float32)
        w = np.zeros((8, 3, 3, 3), dtype=np.float32)
        y, _ = conv2d(x, w, np.zeros(8, dtype=np.float32), stride=1, pad=1)
        assert y.shape == (1, 8, 32, 32)

    @pytest.mark.parametrize("stride,pad", [(1, 0), (1, 1), (2, 0), (2, 1), (3, 2)])
    def test_matches_loop_oracle(self, stride, pad):
        rng = np.random.default_rng(stride * 10 + pad)
        x = rng.standard_normal((2, 3, 9, 8))
        w = rng.standard_normal((4, 3, 3, 3))
        b = rng.standard_normal(4)
        y, _ = conv2d(x, w, b, stride, pad)
        np.testing.assert_allclose(y, conv2d_loops(x, w, b, stride, pad), rtol=1e-10, atol=1e-10)

    def test_channel_mismatch(self):
        with pytest.raises(ShapeMismatch):
            conv2d(np.zeros((1, 2, 4, 4)), np.zeros((1, 3, 3, 3)), np.zeros(1))

    def test_non_positive_output_extent(self):
        with pytest.raises(ShapeMismatch):
            conv2d(np.zeros((1, 1, 2, 2)), np.zeros((1, 1, 5, 5)), np.zeros(1))

    @given(
        extent=st.integers(3, 20),
        kernel=st.integers(1, 5),
        stride=st.integers(1, 3),
        pad=st.integers(0, 2),
    )
    @settings(max_examples=60, deadline=None)
    def test_extent_formula_grid(self, extent, kernel, stride, pad):
        if extent + 2 * pad < kernel:
            return
        expected = (extent + 2 * pad - kernel) // stride + 1
        if expected <= 0:
            return
        assert conv_output_extent(extent, kernel, stride, pad) == expected
        x = np.zeros((1, 1, extent, extent), dtype=np.float32)
        w = np.zeros((1, 1, kernel, kernel), dtype=np.float32)
        y, _ = conv2d(x, w, np.zeros(1, dtype=np.float32), stride, pad)
        assert y.shape[2] == y.shape[3] == expected


# --- maxpool2d ----------------------------------------------------------------

class TestMaxPool2d:
    def test_single_window(self):
        x = np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(1, 1, 2, 2)
        y, _, _ = maxpool2d(x, 2, 2)
        assert y.item() == 4.0

    def test_constant_input_and_mass(self):
        x = np.full((1, 1, 4, 4), 7.0)
        y, _, cache = maxpool2d(x, 2, 2)
        np.testing.assert_allclose(y, 7.0)
        dy = np.random.default_rng(1).random(y.shape)
        dx = maxpool2d_backward(dy, cache)
        # gradient mass preserved per window
        assert dx.sum() == pytest.approx(dy.sum())

    def test_matches_scan_oracle(self):
        x = np.random.default_rng(3).standard_normal((2, 2, 8, 8))
        for window, stride in [(2, 2), (3, 1), (3, 2), (2, 1)]:
            y, _, _ = maxpool2d(x, window, stride)
            np.testing.assert_allclose(y, maxpool_scan(x, window, stride))

    def test_window_too_large(self):
        with pytest.raises(ShapeMismatch):
            maxpool2d(np.zeros((1, 1, 2, 2)), 5, 1)

    @given(st.integers(0, 1000))
    @settings(max_examples=25, deadline=None)
    def test_backward_mass_per_window(self, seed):
        # non-overlapping windows: each window's incoming gradient lands intact
        rng = np.random.default_rng(seed)
        x = rng.standard_normal((1, 1, 6, 6))
        y, _, cache = maxpool2d(x, 2, 2)
        dy = rng.standard_normal(y.shape)
        dx = maxpool2d_backward(dy, cache)
        for i in range(3):
            for j in range(3):
                win = dx[0, 0, 2 * i : 2 * i + 2, 2 * j : 2 * j + 2]
                assert win.sum() == pytest.approx(dy[0, 0, i, j])


# --- relu --------------------------------------------------------------------

class TestRelu:
    def test_sign_cases(self):
        y, _ = relu(np.array([-1.0, 0.0, 2.0]))
        np.testing.assert_array_equal(y, [0.0, 0.0, 2.0])

    def test_all_negative(self):
        y, _ = relu(np.full((3, 3), -5.0))
        np.testing.assert_array_equal(y, np.zeros((3, 3)))

    def test_subgradient_convention(self):
        x = np.array([-0.5, 0.0, 0.5])
        _, cache = relu(x)
        g = relu_backward(np.ones(3), cache)
        np.testing.assert_array_equal(g, [0.0, 0.0, 1.0])


# --- dense ---------------------------------------------------------------------

class TestDense:
    def test_identity(self):
        x = np.random.default_rng(5).random((3, 4))
        y, _ = dense(x, np.eye(4), np.zeros(4))
        np.testing.assert_allclose(y, x)

    def test_hand_arithmetic(self):
        y, _ = dense(np.array([[1.0, 2.0]]), np.eye(2), np.array([1.0, 1.0]))
        np.testing.assert_array_equal(y, [[2.0, 3.0]])

    def test_matches_matmul_oracle(self):
        rng = np.random.default_rng(7)
        x = rng.standard_normal((4, 5))
        w = rng.standard_normal((5, 3))
        b = rng.standard_normal(3)
        y, _ = dense(x, w, b)
        np.testing.assert_allclose(y, matmul_loops(x, w) + b, rtol=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            dense(np.zeros((2, 3)), np.zeros((4, 5)), np.zeros(5))


# --- batchnorm2d -----------------------------------------------------------------

class TestBatchNorm2d:
    def test_zero_variance_channel(self):
        x = np.full((4, 1, 2, 2), 3.0)
        rm, rv = np.zeros(1), np.ones(1)
        y, _ = batchnorm2d(x, np.ones(1), np.zeros(1), 1e-5, "train", rm, rv)
        np.testing.assert_allclose(y, 0.0)

    def test_eval_mode_affine(self):
        x = np.random.default_rng(11).standard_normal((2, 3, 4, 4))
        gamma = np.array([1.0, 2.0, 3.0])
        beta = np.array([0.5, -0.5, 0.0])
        y, _ = batchnorm2d(x, gamma, beta, 1e-12, "eval", np.zeros(3), np.ones(3))
        np.testing.assert_allclose(y, gamma[:, None, None] * x + beta[:, None, None], rtol=1e-6)

    def test_train_normalizes(self):
        x = np.random.default_rng(13).standard_normal((8, 3, 5, 5)) * 4.0 + 2.0
        y, _ = batchnorm2d(x, np.ones(3), np.zeros(3), 1e-10, "train", np.zeros(3), np.ones(3))
        np.testing.assert_allclose(y.mean(axis=(0, 2, 3)), 0.0, atol=1e-5)
        np.testing.assert_allclose(y.var(axis=(0, 2, 3)), 1.0, atol=1e-5)

    def test_batch_of_one_rejected(self):
        with pytest.raises(ValueError):
            batchnorm2d(np.zeros((1, 2, 3, 3)), np.ones(2), np.zeros(2), 1e-5, "train", np.zeros(2), np.ones(2))

    def test_non_positive_epsilon_rejected(self):
        with pytest.raises(ValueError):
            batchnorm2d(np.zeros((2, 2, 3, 3)), np.ones(2), np.zeros(2), 0.0, "train", np.zeros(2), np.ones(2))


# --- global_avg_pool ----------------------------------------------------------

class TestGlobalAvgPool:
    def test_constant_channel(self):
        x = np.full((2, 3, 4, 4), 0.0)
        x[:, 1] = 2.5
        y, _ = global_avg_pool(x)
        np.testing.assert_allclose(y[:, 1], 2.5)

    def test_arithmetic_mean(self):
        x = np.array([[1.0, 3.0], [5.0, 7.0]]).reshape(1, 1, 2, 2)
        y, _ = global_avg_pool(x)
        assert y.item() == 4.0

    def test_one_by_one_identity(self):
        x = np.random.default_rng(17).random((3, 5, 1, 1))
        y, _ = global_avg_pool(x)
        np.testing.assert_allclose(y, x[:, :, 0, 0])


# --- softmax cross-entropy -------------------------------------------------------

class TestSoftmaxCrossEntropy:
    def test_uniform_logits(self):
        logits = np.zeros((2, 16))
        loss, probs = softmax_cross_entropy(logits, np.array([3, 9]))
        assert loss == pytest.approx(np.log(16.0), abs=1e-12)
        np.testing.assert_allclose(probs, 1.0 / 16.0)

    def test_saturated_true_class(self):
        logits = np.zeros((1, 4))
        logits[0, 2] = 1000.0
        loss, _ = softmax_cross_entropy(logits, np.array([2]))
        assert loss == pytest.approx(0.0, abs=1e-9)

    def test_matches_direct_formula(self):
        rng = np.random.default_rng(23)
        logits = rng.standard_normal((3, 4))
        labels = np.array([0, 3, 1])
        # unstabilized 64-bit direct formula on small logits
        exp = np.exp(logits)
        p = exp / exp.sum(axis=1, keepdims=True)
        expected = float(-np.log(p[np.arange(3), labels]).mean())
        loss, probs = softmax_cross_entropy(logits, labels)
        assert loss == pytest.approx(expected, rel=1e-12)
        np.testing.assert_allclose(probs, p, rtol=1e-12)

    def test_label_out_of_range(self):
        with pytest.raises(ValueError):
            softmax_cross_entropy(np.zeros((1, 3)), np.array([3]))

    @given(st.integers(0, 10_000))
    @settings(max_examples=40, deadline=None)
    def test_rows_sum_to_one_and_loss_nonneg(self, seed):
        rng = np.random.default_rng(seed)
        logits = rng.standard_normal((4, 7)) * rng.uniform(0.1, 50)
        labels = rng.integers(0, 7, size=4)
        loss, probs = softmax_cross_entropy(logits, labels)
        np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-6)
        assert loss >= 0.0

    def test_backward_formula(self):
        rng = np.random.default_rng(29)
        logits = rng.standard_normal((5, 3))
        labels = rng.integers(0, 3, size=5)
        _, probs = softmax_cross_entropy(logits, labels)
        d = softmax_cross_entropy_backward(probs, labels)
        onehot = np.eye(3)[labels]
        np.testing.assert_allclose(d, (probs - onehot) / 5.0, rtol=1e-12)


def test_flatten_round_trip():
    x = np.random.default_rng(31).random((2, 3, 4, 5))
    y, cache = flatten(x)
    assert y.shape == (2, 60)
    from shapebias.engine import flatten_backward

    np.testing.assert_array_equal(flatten_backward(y, cache), x)
