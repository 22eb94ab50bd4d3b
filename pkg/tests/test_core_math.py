"""Primitives: normalization, tempered softmax, Gaussian CDF/quantile, stats."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from robust_xid.core_math import (
    gaussian_cdf,
    gaussian_icdf,
    l2_normalize,
    sample_stats,
    tempered_softmax,
)
from robust_xid.errors import (
    InvalidTemperature,
    InvalidVariance,
    OutOfRange,
    TooFewSamples,
    ZeroVector,
)


def quad_normal_cdf(x: float) -> float:
    """Quadrature oracle: integrate the standard normal density up to x."""
    pdf = lambda t: math.exp(-t * t / 2.0) / math.sqrt(2.0 * math.pi)
    val, _ = integrate.quad(pdf, -12.0, x)
    return val


def bisect_icdf(p: float, lo=-10.0, hi=10.0) -> float:
    """Bisection oracle against gaussian_cdf."""
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if gaussian_cdf(mid) < p:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


class TestL2Normalize:
    def test_three_four_five(self):
        np.testing.assert_allclose(l2_normalize([3.0, 4.0]), [0.6, 0.8], atol=1e-12)

    def test_already_unit(self):
        np.testing.assert_allclose(l2_normalize([0.0, 0.0, 1.0]), [0, 0, 1], atol=1e-12)

    def test_random_norm_one(self):
        rng = np.random.default_rng(7)
        v = rng.standard_normal(32)
        u = l2_normalize(v)
        assert abs(np.linalg.norm(u) - 1.0) < 1e-9
        # parallel to v
        np.testing.assert_allclose(u * np.linalg.norm(v), v, rtol=1e-12)

    def test_zero_vector(self):
        with pytest.raises(ZeroVector):
            l2_normalize(np.zeros(4))

    @given(st.lists(st.floats(-1e6, 1e6), min_size=2, max_size=16))
    @settings(max_examples=60)
    def test_idempotent(self, values):
        v = np.asarray(values)
        if np.linalg.norm(v) <= 1e-6:
            return
        once = l2_normalize(v)
        twice = l2_normalize(once)
        np.testing.assert_allclose(once, twice, atol=1e-9)


class TestTemperedSoftmax:
    def test_equal_logits_uniform(self):
        for tau in (0.02, 1.0, 10.0):
            np.testing.assert_allclose(
                tempered_softmax([2.5, 2.5, 2.5], tau), np.full(3, 1 / 3), atol=1e-12)

    def test_two_logits_direct(self):
        got = tempered_softmax([1.0, 0.0], 1.0)
        e = math.exp(1.0)
        np.testing.assert_allclose(got, [e / (e + 1), 1 / (e + 1)], atol=1e-12)

    def test_peaky_temperature_dominates(self):
        got = tempered_softmax([1.0, 0.0], 0.07)
        assert got[0] >= 1 - 1e-5

    def test_invalid_temperature(self):
        with pytest.raises(InvalidTemperature):
            tempered_softmax([1.0, 2.0], 0.0)
        with pytest.raises(InvalidTemperature):
            tempered_softmax([1.0, 2.0], -0.5)

    @given(st.lists(st.floats(-1e8, 1e8), min_size=1, max_size=32),
           st.sampled_from([0.02, 0.07, 1.0]))
    @settings(max_examples=100)
    def test_sums_to_one(self, logits, tau):
        p = tempered_softmax(np.asarray(logits), tau)
        assert abs(p.sum() - 1.0) <= 1e-9
        assert np.all(p >= 0)

    @given(st.lists(st.floats(-100, 100), min_size=2, max_size=16),
           st.floats(-1e3, 1e3),
           st.sampled_from([0.02, 0.07, 1.0]))
    @settings(max_examples=100)
    def test_shift_invariance(self, logits, shift, tau):
        base = tempered_softmax(np.asarray(logits), tau)
        moved = tempered_softmax(np.asarray(logits) + shift, tau)
        np.testing.assert_allclose(base, moved, atol=1e-9)


class TestGaussianCdf:
    def test_at_mean(self):
        assert gaussian_cdf(3.0, mean=3.0, var=2.0) == pytest.approx(0.5, abs=1e-12)

    def test_one_sigma_vs_quadrature(self):
        got = gaussian_cdf(1.3 + math.sqrt(0.49), mean=1.3, var=0.49)
        assert got == pytest.approx(quad_normal_cdf(1.0), abs=1e-9)
        assert got == pytest.approx(0.841345, abs=1e-5)

    def test_far_left_tail(self):
        assert gaussian_cdf(-10.0, mean=0.0, var=1.0) < 1e-15

    def test_monotone(self):
        xs = np.linspace(-6, 6, 200)
        vals = gaussian_cdf(xs)
        assert np.all(np.diff(vals) >= 0)

    def test_invalid_variance(self):
        with pytest.raises(InvalidVariance):
            gaussian_cdf(0.0, 0.0, 0.0)
        with pytest.raises(InvalidVariance):
            gaussian_cdf(0.0, 0.0, -1.0)

    @given(st.floats(-30, 30), st.floats(-5, 5), st.floats(0.01, 25))
    @settings(max_examples=100)
    def test_symmetry(self, x, mean, var):
        total = gaussian_cdf(x, mean, var) + gaussian_cdf(2 * mean - x, mean, var)
        assert total == pytest.approx(1.0, abs=1e-9)


class TestGaussianIcdf:
    def test_median(self):
        assert gaussian_icdf(0.5) == pytest.approx(0.0, abs=1e-12)

    def test_one_sigma(self):
        assert gaussian_icdf(0.841345) == pytest.approx(1.0, abs=1e-4)

    def test_two_and_a_half_percent(self):
        assert gaussian_icdf(0.025) == pytest.approx(bisect_icdf(0.025), abs=1e-8)
        assert gaussian_icdf(0.025) == pytest.approx(-1.95996, abs=1e-4)

    def test_out_of_range(self):
        for p in (0.0, 1.0, -0.1, 1.1):
            with pytest.raises(OutOfRange):
                gaussian_icdf(p)

    def test_roundtrip_on_grid(self):
        for x in np.linspace(-4, 4, 41):
            assert gaussian_icdf(gaussian_cdf(x)) == pytest.approx(x, abs=1e-6)

    def test_postcondition(self):
        for p in (0.01, 0.3, 0.5, 0.9, 0.999):
            assert gaussian_cdf(gaussian_icdf(p)) == pytest.approx(p, abs=1e-8)


class TestSampleStats:
    def test_constant(self):
        assert sample_stats([1.0, 1.0, 1.0]) == (1.0, 0.0)

    def test_two_point_unbiased(self):
        mean, var = sample_stats([0.0, 2.0])
        assert mean == 1.0
        assert var == 2.0

    def test_monte_carlo(self):
        rng = np.random.default_rng(42)
        draws = 0.3 + 0.2 * rng.standard_normal(1000)
        mean, var = sample_stats(draws)
        assert mean == pytest.approx(0.3, abs=0.02)
        assert var == pytest.approx(0.04, abs=0.01)

    def test_too_few(self):
        with pytest.raises(TooFewSamples):
            sample_stats([1.0])
