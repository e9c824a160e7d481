"""Tests for moment formulas, Chebyshev bounds, and scaling searches."""

import math

import numpy as np
import pytest

from sharpkit.qcore import RngStream, sample_haar_state
from sharpkit.measure import classical_device
from sharpkit import protocols
from sharpkit.stats import (
    CollisionMoments,
    MomentPair,
    ScalingPoint,
    SearchFailureError,
    chebyshev_success,
    collision_moments,
    empirical_success,
    haar_mean_moments,
    minimal_query_search,
    scaling_exponent,
    uniform_moments,
    wilson_interval,
)


class TestMoments:
    def test_uniform_values(self):
        m = uniform_moments(256)
        assert m.s2 == 0.00390625
        assert m.s3 == 1.52587890625e-05
        assert uniform_moments(1) == MomentPair(1.0, 1.0)
        assert uniform_moments(2) == MomentPair(0.5, 0.25)

    def test_haar_mean_values(self):
        m = haar_mean_moments(256)
        assert m.s2 == pytest.approx(2 / 257, rel=1e-15)
        assert m.s3 == pytest.approx(6 / (257 * 258), rel=1e-15)
        assert haar_mean_moments(1) == MomentPair(1.0, 1.0)

    def test_moment_pair_envelope(self):
        with pytest.raises(ValueError):
            MomentPair(s2=0.1, s3=0.2)
        with pytest.raises(ValueError):
            MomentPair(s2=1.1, s3=0.5)

    def test_haar_mean_s2_monte_carlo(self):
        d, samples = 8, 10_000
        rng = RngStream(201)
        s2 = np.array([
            float(np.sum(sample_haar_state(d, rng.substream(i)).probabilities() ** 2))
            for i in range(samples)
        ])
        se = s2.std(ddof=1) / math.sqrt(samples)
        assert abs(s2.mean() - 2 / (d + 1)) <= 4 * se

    @pytest.mark.parametrize("d", [2, 8, 32])
    def test_haar_mean_both_moments_monte_carlo(self, d):
        samples = 4000
        rng = RngStream(202).substream(d)
        s2 = np.empty(samples)
        s3 = np.empty(samples)
        for i in range(samples):
            p = sample_haar_state(d, rng.substream(i)).probabilities()
            s2[i] = np.sum(p**2)
            s3[i] = np.sum(p**3)
        m = haar_mean_moments(d)
        assert abs(s2.mean() - m.s2) <= 5 * s2.std(ddof=1) / math.sqrt(samples)
        assert abs(s3.mean() - m.s3) <= 5 * s3.std(ddof=1) / math.sqrt(samples)

    def test_strict_separation(self):
        for d in range(2, 200):
            assert haar_mean_moments(d).s2 - uniform_moments(d).s2 > 0


class TestCollisionMoments:
    def test_uniform_256(self):
        m = collision_moments(320, uniform_moments(256))
        assert m.expectation == pytest.approx(199.375, abs=1e-12)
        assert m.variance == pytest.approx(198.59619140625, abs=1e-9)

    def test_haar_256(self):
        m = collision_moments(320, haar_mean_moments(256))
        assert m.expectation == pytest.approx(math.comb(320, 2) * 2 / 257, rel=1e-14)

    def test_single_pair(self):
        pair = MomentPair(0.3, 0.2)
        m = collision_moments(2, pair)
        assert m.expectation == pytest.approx(0.3)
        assert m.variance == pytest.approx(0.3 - 0.09)

    def test_rejects_small_n(self):
        with pytest.raises(ValueError):
            collision_moments(1, uniform_moments(2))

    def test_matches_empirical_mean_and_variance(self):
        # d=64, N=160, uniform device, 1e4 runs: both statistics within
        # 5 standard errors of the closed forms.
        rng = RngStream(101)
        dev = classical_device(64)
        runs = 10_000
        cs = np.array([
            protocols.collision_test(dev, 160, rng.substream(i)).statistic
            for i in range(runs)
        ])
        m = collision_moments(160, uniform_moments(64))
        se_mean = cs.std(ddof=1) / math.sqrt(runs)
        assert abs(cs.mean() - m.expectation) <= 5 * se_mean
        centered = cs - cs.mean()
        sample_var = cs.var(ddof=1)
        se_var = math.sqrt(
            (np.mean(centered**4) - (runs - 3) / (runs - 1) * sample_var**2) / runs)
        assert abs(sample_var - m.variance) <= 5 * se_var

    def test_variance_nonnegative_guard(self):
        with pytest.raises(ValueError):
            CollisionMoments(expectation=1.0, variance=-0.1)


class TestChebyshev:
    def test_paper_regime_bound(self):
        # At N = 20*sqrt(d) the bound clears 0.84 once d is large enough for
        # the C(N,3)/d^2 term (= 48000/sqrt(d)) to fade.
        for d in (4096, 10_000):
            n = math.ceil(20 * math.sqrt(d))
            assert chebyshev_success(n, d) >= 0.84

    def test_moderate_dimension_clears_two_thirds(self):
        assert chebyshev_success(640, 1024) >= 2 / 3

    def test_single_pair_gives_nothing(self):
        assert chebyshev_success(2, 2) == 0.0

    def test_monotone_in_n(self):
        d = 256
        values = [chebyshev_success(n, d) for n in range(2, 2000, 37)]
        assert all(b >= a - 1e-12 for a, b in zip(values, values[1:]))

    def test_clipped_to_unit_interval(self):
        for n in (2, 10, 100, 10_000):
            v = chebyshev_success(n, 64)
            assert 0.0 <= v <= 1.0


class TestWilson:
    def test_extremes(self):
        lo, hi = wilson_interval(0, 20)
        assert lo == 0.0 and hi < 0.2
        lo, hi = wilson_interval(20, 20)
        assert hi == 1.0 and lo > 0.8

    def test_contains_rate(self):
        lo, hi = wilson_interval(150, 200)
        assert lo < 0.75 < hi

    def test_rejects_bad_input(self):
        with pytest.raises(ValueError):
            wilson_interval(5, 0)
        with pytest.raises(ValueError):
            wilson_interval(5, 3)


class TestEmpiricalSuccess:
    def test_collision_at_scale(self):
        est = empirical_success(256, 320, 200, RngStream(7))
        assert est.rate >= 2 / 3
        assert est.successes + (est.trials - est.successes) == 200

    def test_single_pair_is_chance_level(self):
        est = empirical_success(1024, 2, 400, RngStream(11))
        assert est.lower <= 0.5 <= est.upper

    def test_projective_only(self):
        d = 64
        n = protocols.default_collision_queries(d)
        est = empirical_success(d, n, 200, RngStream(13), hypothesis="projective")
        assert est.rate >= 2 / 3

    def test_measure_twice_protocol(self):
        est = empirical_success(16, 20, 200, RngStream(17), protocol="measure-twice")
        assert est.rate >= 0.95

    def test_unknown_protocol(self):
        with pytest.raises(ValueError):
            empirical_success(4, 10, 10, RngStream(0), protocol="nope")


class TestMinimalQuerySearch:
    def test_collision_upper_bound_at_d16(self):
        n = minimal_query_search(16, 2 / 3, 300, RngStream(19))
        assert 2 <= n <= 80  # 20 * sqrt(16)

    def test_ratio_tracks_sqrt_scaling(self):
        n4 = minimal_query_search(4, 2 / 3, 400, RngStream(2))
        n256 = minimal_query_search(256, 2 / 3, 400, RngStream(2))
        ratio = n256 / n4
        assert 8 / 2.5 <= ratio <= 8 * 2.5

    def test_measure_twice_is_constant(self):
        for d in (4, 64, 1024):
            reps = minimal_query_search(d, 2 / 3, 200, RngStream(23),
                                        protocol="measure-twice")
            assert reps <= 20

    def test_unreachable_target_fails(self):
        with pytest.raises(SearchFailureError):
            minimal_query_search(2, 0.95, 100, RngStream(1))

    def test_rejects_bad_target(self):
        with pytest.raises(ValueError):
            minimal_query_search(16, 0.5, 10, RngStream(0))

    def test_deterministic(self):
        a = minimal_query_search(64, 2 / 3, 200, RngStream(29))
        b = minimal_query_search(64, 2 / 3, 200, RngStream(29))
        assert a == b


class TestScalingExponent:
    def test_exact_square_root_law(self):
        points = [ScalingPoint(d, int(20 * math.isqrt(d))) for d in (16, 64, 256, 1024)]
        fit = scaling_exponent(points)
        assert abs(fit.slope - 0.5) < 1e-9
        assert fit.residual < 1e-9

    def test_constant_law(self):
        points = [ScalingPoint(d, 20) for d in (16, 64, 256, 1024)]
        fit = scaling_exponent(points)
        assert abs(fit.slope) < 1e-9

    def test_needs_three_distinct_points(self):
        with pytest.raises(ValueError):
            scaling_exponent([ScalingPoint(4, 10), ScalingPoint(8, 12)])
        with pytest.raises(ValueError):
            scaling_exponent([ScalingPoint(4, 10), ScalingPoint(4, 12),
                              ScalingPoint(8, 14)])

    def test_n_min_floor(self):
        with pytest.raises(ValueError):
            ScalingPoint(4, 1)
