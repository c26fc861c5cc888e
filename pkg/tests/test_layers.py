"""Layer kernels: hand cases, naive-oracle equivalence, gradient checks,
dropout semantics and softmax properties."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import central_diff, grad_check_error
from gradcheck import LAYER_CHECKS, TOL
from mtfer import layers
from mtfer.errors import DimensionError, NumericError, RangeError, UsageError
from mtfer.tensor import seeded_rng
from oracle_kernels import naive_conv2d, naive_dense, naive_maxpool


class TestConv2dForward:
    def test_identity_kernel(self, rng):
        x = rng.uniform(0, 1, (5, 5, 1))
        w = np.ones((1, 1, 1, 1))
        y, _ = layers.conv2d_forward(x, w, np.zeros(1))
        np.testing.assert_array_equal(y, x)

    def test_constant_field_interior(self):
        v = 0.37
        x = np.full((6, 6, 1), v)
        w = np.ones((3, 3, 1, 1))
        y, _ = layers.conv2d_forward(x, w, np.zeros(1))
        np.testing.assert_allclose(y[1:-1, 1:-1, 0], 9 * v, rtol=0, atol=1e-14)

    def test_matches_naive_oracle(self, rng):
        x = rng.uniform(-1, 1, (6, 6, 2))
        w = rng.uniform(-1, 1, (3, 3, 2, 4))
        b = rng.uniform(-1, 1, 4)
        y, _ = layers.conv2d_forward(x, w, b)
        np.testing.assert_allclose(y, naive_conv2d(x, w, b), rtol=0, atol=1e-12)

    def test_strided_matches_naive(self, rng):
        x = rng.uniform(-1, 1, (5, 7, 2))
        w = rng.uniform(-1, 1, (3, 3, 2, 3))
        b = rng.uniform(-1, 1, 3)
        y, _ = layers.conv2d_forward(x, w, b, stride=2)
        assert y.shape == (3, 4, 3)
        np.testing.assert_allclose(y, naive_conv2d(x, w, b, stride=2), rtol=0, atol=1e-12)

    def test_channel_mismatch(self, rng):
        with pytest.raises(DimensionError, match="channel"):
            layers.conv2d_forward(rng.uniform(0, 1, (5, 5, 2)),
                                  rng.uniform(0, 1, (3, 3, 3, 4)), np.zeros(4))


class TestConv2dBackward:
    def test_zero_upstream_gradient(self, rng):
        x = rng.uniform(-1, 1, (5, 5, 2))
        w = rng.uniform(-1, 1, (3, 3, 2, 3))
        y, cache = layers.conv2d_forward(x, w, np.zeros(3))
        gx, gw, gb = layers.conv2d_backward(np.zeros_like(y), cache)
        assert not gx.any() and not gw.any() and not gb.any()

    def test_bias_gradient_is_channel_sum(self, rng):
        x = rng.uniform(-1, 1, (5, 5, 2))
        w = rng.uniform(-1, 1, (3, 3, 2, 3))
        y, cache = layers.conv2d_forward(x, w, np.zeros(3))
        gy = rng.uniform(-1, 1, y.shape)
        _, _, gb = layers.conv2d_backward(gy, cache)
        np.testing.assert_allclose(gb, gy.sum(axis=(0, 1)), rtol=0, atol=1e-12)

    def test_missing_cache(self):
        with pytest.raises(UsageError):
            layers.conv2d_backward(np.zeros((2, 2, 1)), None)


class TestMaxPool:
    def test_hand_case(self):
        x = np.array([[1.0, 2.0], [3.0, 4.0]])[:, :, None]
        y, cache = layers.maxpool_forward(x)
        assert y[0, 0, 0] == 4.0
        gx = layers.maxpool_backward(np.array([[[5.0]]]), cache)
        expected = np.zeros((2, 2, 1))
        expected[1, 1, 0] = 5.0
        np.testing.assert_array_equal(gx, expected)

    def test_tie_first_position_row_major(self):
        x = np.full((2, 2, 1), 3.0)
        y, cache = layers.maxpool_forward(x)
        gx = layers.maxpool_backward(np.ones((1, 1, 1)), cache)
        expected = np.zeros((2, 2, 1))
        expected[0, 0, 0] = 1.0   # first in row-major scan order
        np.testing.assert_array_equal(gx, expected)

    def test_matches_naive_oracle(self, rng):
        x = rng.uniform(-1, 1, (5, 7, 3))
        y, _ = layers.maxpool_forward(x)
        assert y.shape == (2, 3, 3)
        np.testing.assert_array_equal(y, naive_maxpool(x))

    def test_backward_single_position_per_window(self, rng):
        x = rng.uniform(-1, 1, (6, 6, 2))
        y, cache = layers.maxpool_forward(x)
        gx = layers.maxpool_backward(np.ones_like(y), cache)
        nonzero = (gx != 0).reshape(3, 2, 3, 2, 2).sum(axis=(1, 3))
        np.testing.assert_array_equal(nonzero, np.ones((3, 3, 2)))


class TestDense:
    def test_identity_weights(self, rng):
        x = rng.uniform(-1, 1, 6)
        y, _ = layers.dense_forward(x, np.eye(6), np.zeros(6))
        np.testing.assert_array_equal(y, x)

    def test_matches_naive_oracle(self, rng):
        x = rng.uniform(-1, 1, 5)
        w = rng.uniform(-1, 1, (5, 3))
        b = rng.uniform(-1, 1, 3)
        y, _ = layers.dense_forward(x, w, b)
        np.testing.assert_allclose(y, naive_dense(x, w, b), rtol=0, atol=1e-12)

    def test_shape_mismatch(self, rng):
        with pytest.raises(DimensionError):
            layers.dense_forward(rng.uniform(-1, 1, 4), rng.uniform(-1, 1, (5, 3)), np.zeros(3))


class TestDropout:
    def test_infer_identity_bit_exact(self, rng):
        x = rng.uniform(-1, 1, (4, 4))
        for rate in (0.0, 0.3, 0.9):
            y, _ = layers.dropout_forward(x, rate, "infer")
            np.testing.assert_array_equal(y, x)

    def test_zero_rate_train_identity(self, rng):
        x = rng.uniform(-1, 1, (4, 4))
        y, _ = layers.dropout_forward(x, 0.0, "train", seeded_rng(1))
        np.testing.assert_array_equal(y, x)

    def test_half_rate_doubles_kept_entries(self, rng):
        x = rng.uniform(0.1, 1, (8, 8))
        y, cache = layers.dropout_forward(x, 0.5, "train", seeded_rng(99))
        kept = cache.mask
        np.testing.assert_array_equal(y[kept], 2.0 * x[kept])
        assert not y[~kept].any()

    def test_mask_reproducible_same_seed(self, rng):
        x = rng.uniform(-1, 1, (8, 8))
        _, c1 = layers.dropout_forward(x, 0.5, "train", seeded_rng(99))
        _, c2 = layers.dropout_forward(x, 0.5, "train", seeded_rng(99))
        np.testing.assert_array_equal(c1.mask, c2.mask)

    def test_train_mode_mean_preserving(self):
        # inverted scaling: E[output] == input, checked over 1e4 masks
        x = np.full((10,), 1.0)
        rng_stream = seeded_rng(5)
        total = np.zeros_like(x)
        n = 10000
        for _ in range(n):
            y, _ = layers.dropout_forward(x, 0.4, "train", rng_stream)
            total += y
        np.testing.assert_allclose(total / n, x, rtol=0.05)

    def test_rate_out_of_range(self, rng):
        x = rng.uniform(-1, 1, (2, 2))
        for rate in (-0.1, 1.0, 1.5):
            with pytest.raises(RangeError):
                layers.dropout_forward(x, rate, "train", seeded_rng(0))

    def test_train_needs_rng(self, rng):
        with pytest.raises(UsageError):
            layers.dropout_forward(rng.uniform(-1, 1, (2, 2)), 0.5, "train")


class TestSoftmax:
    def test_symmetry(self):
        np.testing.assert_allclose(layers.softmax(np.zeros(3)), np.full(3, 1 / 3),
                                   rtol=0, atol=1e-15)

    def test_analytic_ln2(self):
        p = layers.softmax(np.array([np.log(2.0), 0.0, 0.0]))
        np.testing.assert_allclose(p, [0.5, 0.25, 0.25], rtol=0, atol=1e-15)

    def test_large_inputs_no_overflow(self):
        p = layers.softmax(np.array([1000.0, 1000.0, 1000.0]))
        np.testing.assert_allclose(p, np.full(3, 1 / 3), rtol=0, atol=1e-15)

    def test_sum_to_one_random(self, rng):
        # logit spread capped at ~30 so no entry saturates to exactly 0 or 1
        # in float64; beyond that the open-interval property is unrepresentable
        z = rng.uniform(-15, 15, (100, 7))
        p = layers.softmax(z)
        np.testing.assert_allclose(p.sum(axis=1), 1.0, rtol=0, atol=1e-12)
        assert (p > 0).all() and (p < 1).all()

    @given(st.lists(st.floats(-100, 100), min_size=2, max_size=9),
           st.floats(-100, 100))
    @settings(max_examples=200, deadline=None)
    def test_shift_invariance(self, zs, c):
        z = np.array(zs)
        np.testing.assert_allclose(layers.softmax(z + c), layers.softmax(z),
                                   rtol=0, atol=1e-12)

    def test_non_finite_rejected(self):
        with pytest.raises(NumericError):
            layers.softmax(np.array([1.0, np.nan]))
        with pytest.raises(NumericError):
            layers.softmax(np.array([1.0, np.inf]))


class TestGradients:
    """Central finite differences vs analytic backward, per layer kind."""

    @pytest.mark.parametrize("kind", sorted(LAYER_CHECKS))
    def test_gradient_check(self, kind):
        rng = np.random.default_rng(hash(kind) % 2 ** 32)
        worst = max(LAYER_CHECKS[kind](rng) for _ in range(5))
        assert worst <= TOL, f"{kind}: worst relative error {worst:.2e}"
