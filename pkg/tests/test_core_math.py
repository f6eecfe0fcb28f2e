import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from difftok.core_math import (
    SeededRng,
    gumbel_from_uniform,
    sample_gumbel,
    softmax_t,
    sq_euclidean,
)


class TestSqEuclidean:
    def test_identical_points(self):
        assert sq_euclidean([0, 0], [0, 0]) == 0.0

    def test_unit_square_diagonal(self):
        assert sq_euclidean([1, 0], [0, 1]) == 2.0

    def test_direct_arithmetic(self):
        # oracle: 3^2 + 4^2 + 0^2 = 25
        assert sq_euclidean([1, 2, 3], [4, 6, 3]) == 25.0

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            sq_euclidean([1, 2], [1, 2, 3])

    @given(st.lists(st.floats(-100, 100), min_size=1, max_size=8).flatmap(
        lambda a: st.tuples(st.just(a), st.lists(st.floats(-100, 100),
                                                 min_size=len(a), max_size=len(a)))))
    def test_symmetric_and_nonnegative(self, ab):
        a, b = np.array(ab[0]), np.array(ab[1])
        d = sq_euclidean(a, b)
        assert d >= 0
        assert d == sq_euclidean(b, a)
        if np.array_equal(a, b):
            assert d == 0.0

    def test_zero_iff_equal(self):
        a = np.array([1.0, 2.0])
        assert sq_euclidean(a, a) == 0.0
        assert sq_euclidean(a, a + 1e-8) > 0.0


class TestSoftmaxT:
    def test_uniform_logits(self):
        np.testing.assert_allclose(softmax_t(np.array([3.0, 3.0, 3.0]), 1.0),
                                   np.ones(3) / 3, rtol=0, atol=1e-15)

    def test_direct_evaluation(self):
        # oracle: e^0/(e^0+e^1), e^1/(e^0+e^1)
        expected = np.array([1.0, math.e]) / (1.0 + math.e)
        np.testing.assert_allclose(softmax_t(np.array([0.0, 1.0]), 1.0),
                                   expected, atol=5e-6)
        np.testing.assert_allclose(softmax_t(np.array([0.0, 1.0]), 1.0),
                                   [0.26894, 0.73106], atol=1e-5)

    def test_low_temperature_limit(self):
        p = softmax_t(np.array([0.0, 1.0]), 0.01)
        assert abs(p[1] - 1.0) < 1e-12

    def test_invalid_tau(self):
        with pytest.raises(ValueError):
            softmax_t(np.array([0.0, 1.0]), 0.0)
        with pytest.raises(ValueError):
            softmax_t(np.array([0.0, 1.0]), -1.0)

    def test_nonfinite_logits_rejected(self):
        with pytest.raises(ValueError):
            softmax_t(np.array([0.0, np.nan]), 1.0)
        with pytest.raises(ValueError):
            softmax_t(np.array([0.0, np.inf]), 1.0)

    @settings(max_examples=200)
    @given(
        st.lists(st.floats(-50, 50), min_size=1, max_size=10),
        st.floats(1e-3, 1e3),
    )
    def test_rows_sum_to_one(self, logits, tau):
        p = softmax_t(np.array(logits), tau)
        assert abs(p.sum() - 1.0) < 1e-12
        # entries can underflow to exactly 0 at extreme logit/tau ratios
        assert np.all(p >= 0) and np.all(p <= 1.0 + 1e-15)


class TestGumbel:
    def test_median_value(self):
        # oracle: -ln(-ln 0.5)
        assert abs(gumbel_from_uniform(np.array(0.5)) - 0.36651) < 1e-5

    def test_zero_point(self):
        # -ln(-ln e^-1) = -ln 1 = 0
        assert abs(gumbel_from_uniform(np.array(math.exp(-1)))) < 1e-12

    def test_clamping_keeps_finite(self):
        g = gumbel_from_uniform(np.array([0.0, 1.0]))
        assert np.all(np.isfinite(g))

    def test_sample_mean_matches_euler_mascheroni(self):
        rng = SeededRng(123)
        g = sample_gumbel(rng, 100_000)
        assert abs(g.mean() - 0.5772) < 0.01

    def test_invalid_count(self):
        with pytest.raises(ValueError):
            sample_gumbel(SeededRng(0), 0)


class TestSeededRng:
    def test_reproducible_streams(self):
        a = SeededRng(42).uniform(size=10_000)
        b = SeededRng(42).uniform(size=10_000)
        np.testing.assert_array_equal(a, b)

    def test_different_seeds_differ(self):
        assert not np.array_equal(SeededRng(1).uniform(size=100),
                                  SeededRng(2).uniform(size=100))

    def test_fork_is_deterministic_and_independent(self):
        r = SeededRng(7)
        c1 = r.fork(1).uniform(size=100)
        c2 = SeededRng(7).fork(1).uniform(size=100)
        np.testing.assert_array_equal(c1, c2)
        assert not np.array_equal(c1, SeededRng(7).fork(2).uniform(size=100))

    def test_seed_bounds(self):
        with pytest.raises(ValueError):
            SeededRng(-1)
        with pytest.raises(ValueError):
            SeededRng(2**64)

    def test_choice_weighted_matches_weights(self):
        r = SeededRng(3)
        w = np.array([0.2, 0.8])
        draws = np.array([r.choice_weighted(w) for _ in range(20_000)])
        assert abs(draws.mean() - 0.8) < 0.02
