"""Robust scaling and replicate-padded moving averages."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ttf.errors import InvalidBounds, InvalidConfig, ScaleTooLarge
from ttf.preprocess import (
    IQR_FLOOR,
    batch_inverse_scale,
    batch_scale_inputs,
    batch_scale_stats,
    clip,
    inverse_robust_scale,
    ma_operator,
    moving_average,
    moving_average_adjoint,
    robust_scale,
    validate_scales,
)


class TestClip:
    def test_basics(self):
        assert clip(5, 0, 9) == 5
        assert clip(-3, 0, 9) == 0
        assert clip(12, 0, 9) == 9

    def test_invalid_bounds(self):
        with pytest.raises(InvalidBounds):
            clip(0, 3, 1)


class TestRobustScale:
    def test_pinned_example(self):
        """[1..5] has median 3, IQR 2, so it scales to [-1,-.5,0,.5,1]."""
        scaled, params = robust_scale(np.array([1.0, 2.0, 3.0, 4.0, 5.0]))
        np.testing.assert_array_equal(scaled, [-1.0, -0.5, 0.0, 0.5, 1.0])
        assert params.median == 3.0 and params.iqr == 2.0
        assert not params.degenerate

    def test_outlier_robustness(self):
        """Multiplying the max by 1000 must leave the other scaled entries
        bit-identical: median and quartiles don't move."""
        x = np.array([1.0, 2.0, 3.0, 4.0, 5.0])
        base, _ = robust_scale(x)
        spiked = x.copy()
        spiked[-1] *= 1000
        scaled, _ = robust_scale(spiked)
        np.testing.assert_array_equal(scaled[:-1], base[:-1])

    def test_degenerate_column_flagged_and_safe(self):
        scaled, params = robust_scale(np.full(6, 2.5))
        assert params.degenerate
        assert params.iqr == 1.0
        np.testing.assert_array_equal(scaled, 0.0)
        np.testing.assert_array_equal(inverse_robust_scale(scaled, params), 2.5)

    @given(st.lists(st.floats(-1e6, 1e6), min_size=2, max_size=50),
           st.floats(1e-3, 1e3))
    @settings(max_examples=200, deadline=None)
    def test_round_trip_property(self, values, spread):
        """inverse(forward(x)) == x to tight relative tolerance, for any
        column whose IQR is not collapsed."""
        x = np.asarray(values) * spread
        scaled, params = robust_scale(x)
        back = inverse_robust_scale(scaled, params)
        np.testing.assert_allclose(back, x, rtol=1e-9, atol=1e-9 * max(1.0, np.abs(x).max()))

    def test_round_trip_many_random_columns(self):
        rng = np.random.default_rng(3)
        for _ in range(1000):
            x = rng.normal(rng.uniform(-50, 50), rng.uniform(0.1, 20), size=rng.integers(2, 40))
            scaled, params = robust_scale(x)
            np.testing.assert_allclose(inverse_robust_scale(scaled, params), x,
                                       rtol=1e-9, atol=1e-9)


class TestMovingAverage:
    def test_pinned_example(self):
        """[1,2,3,4] at scale 3 with replicate padding -> [4/3, 2, 3, 11/3]."""
        out = moving_average(np.array([1.0, 2.0, 3.0, 4.0]), 3)
        np.testing.assert_allclose(out, [4 / 3, 2.0, 3.0, 11 / 3], atol=1e-12)

    def test_scale_one_is_identity(self):
        x = np.random.default_rng(0).normal(size=(7, 3))
        out = moving_average(x, 1)
        np.testing.assert_array_equal(out, x)
        assert out is not x  # a copy, not a view

    def test_constant_preserved_exactly(self):
        # 3.7 is not a dyadic rational, so naive tap summation would already
        # drift by an ulp; the deviation form keeps it exact at any scale.
        x = np.full((9, 2), 3.7)
        for scale in (2, 3, 5, 9):
            np.testing.assert_array_equal(moving_average(x, scale), x)

    def test_naive_oracle_equality(self):
        """Vectorized result equals a scalar per-cell loop bit-for-bit."""
        rng = np.random.default_rng(5)
        for _ in range(25):
            l = int(rng.integers(1, 33))
            k = int(rng.integers(1, 4))
            scale = int(rng.choice([s for s in (1, 3, 5, 7) if s <= l]))
            x = rng.normal(size=(l, k))
            expected = np.zeros_like(x)
            for p in range(l):
                for j in range(k):
                    acc = 0.0
                    for r in range(scale):
                        acc += x[clip(p + r - scale // 2, 0, l - 1), j] - x[p, j]
                    expected[p, j] = x[p, j] + acc / scale
            np.testing.assert_array_equal(moving_average(x, scale), expected)

    def test_matches_plain_tap_mean(self):
        """Same sum rearranged: mean over r of M[clip(p + r - w//2, 0, l-1)]."""
        rng = np.random.default_rng(6)
        for _ in range(10):
            l = int(rng.integers(2, 12))
            k = int(rng.integers(1, 4))
            scale = int(rng.integers(1, l + 1))
            x = rng.normal(size=(l, k))
            expected = np.zeros_like(x)
            for p in range(l):
                for r in range(scale):
                    expected[p] += x[clip(p + r - scale // 2, 0, l - 1)]
            expected /= scale
            np.testing.assert_allclose(moving_average(x, scale), expected, atol=1e-12)

    def test_even_scales_allowed(self):
        out = moving_average(np.array([1.0, 2.0, 3.0, 4.0]), 2)
        # offset = 1: S[p] = (x[clip(p-1)] + x[p]) / 2
        np.testing.assert_allclose(out, [1.0, 1.5, 2.5, 3.5])

    def test_scale_too_large(self):
        with pytest.raises(ScaleTooLarge):
            moving_average(np.zeros(4), 5)
        with pytest.raises(InvalidConfig):
            moving_average(np.zeros(4), 0)

    def test_batched_matches_per_matrix(self):
        rng = np.random.default_rng(11)
        x = rng.normal(size=(6, 8, 3))
        out = moving_average(x, 4)
        for b in range(6):
            np.testing.assert_array_equal(out[b], moving_average(x[b], 4))

    def test_adjoint_is_transpose(self):
        """<A x, y> == <x, A^T y> for the smoothing operator."""
        rng = np.random.default_rng(13)
        x, y = rng.normal(size=(10, 2)), rng.normal(size=(10, 2))
        lhs = np.sum(moving_average(x, 5) * y)
        rhs = np.sum(x * moving_average_adjoint(y, 5))
        assert abs(lhs - rhs) < 1e-12

    def test_operator_rows_sum_to_one(self):
        for scale in range(1, 8):
            op = ma_operator(8, scale)
            np.testing.assert_allclose(op.sum(axis=1), 1.0, atol=1e-12)


class TestValidateScales:
    def test_first_must_be_one(self):
        with pytest.raises(InvalidConfig):
            validate_scales((3, 7))

    def test_strictly_increasing(self):
        with pytest.raises(InvalidConfig):
            validate_scales((1, 7, 7))
        assert validate_scales([1, 3, 7, 14]) == (1, 3, 7, 14)

    def test_single_scale_ok(self):
        assert validate_scales((1,)) == (1,)


class TestBatchScaling:
    def make_batch(self, seed=0, b=5, l=8, k=3):
        rng = np.random.default_rng(seed)
        prefixes = np.array([0, 2, 4])[:k]
        inputs = rng.uniform(1, 9, size=(b, l, k))
        for j, p in enumerate(prefixes):
            inputs[:, :p, j] = 0.0
        return inputs, prefixes

    def test_stats_ignore_padding(self):
        """Column stats come from the valid region only: injecting huge
        values into the padding must not change them."""
        inputs, prefixes = self.make_batch()
        med1, iqr1, _ = batch_scale_stats(inputs, prefixes)
        poisoned = inputs.copy()
        poisoned[:, :2, 1] = 1e9  # padding region of column 1
        med2, iqr2, _ = batch_scale_stats(poisoned, prefixes)
        np.testing.assert_array_equal(med1, med2)
        np.testing.assert_array_equal(iqr1, iqr2)

    def test_stats_match_per_column_quantiles(self):
        inputs, prefixes = self.make_batch(seed=4)
        med, iqr, degenerate = batch_scale_stats(inputs, prefixes)
        for b in range(inputs.shape[0]):
            for j, p in enumerate(prefixes):
                valid = inputs[b, p:, j]
                q25, q50, q75 = np.quantile(valid, [0.25, 0.5, 0.75])
                assert med[b, j] == q50
                assert iqr[b, j] == (q75 - q25 if q75 - q25 > IQR_FLOOR else 1.0)
        assert not degenerate.any()

    def test_scaled_padding_stays_zero(self):
        inputs, prefixes = self.make_batch(seed=6)
        med, iqr, _ = batch_scale_stats(inputs, prefixes)
        scaled = batch_scale_inputs(inputs, prefixes, med, iqr)
        for j, p in enumerate(prefixes):
            np.testing.assert_array_equal(scaled[:, :p, j], 0.0)

    def test_batch_round_trip(self):
        inputs, prefixes = self.make_batch(seed=8)
        med, iqr, _ = batch_scale_stats(inputs, prefixes)
        scaled = batch_scale_inputs(inputs, prefixes, med, iqr)
        back = batch_inverse_scale(scaled, med, iqr)
        for j, p in enumerate(prefixes):
            np.testing.assert_allclose(back[:, p:, j], inputs[:, p:, j], rtol=1e-12)
