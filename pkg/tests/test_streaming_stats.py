"""Tests for Welford running statistics and standardization."""
import time

import numpy as np
import pytest

from engine.errors import ShapeError
from engine.streaming_stats import RunningStats


class TestRunningStats:

    def test_hand_evaluation(self):
        stats = RunningStats(1)
        for value in (2.0, 4.0, 6.0):
            stats.update([value])
        assert stats.n == 3
        assert stats.mean[0] == pytest.approx(4.0)
        assert stats.variance[0] == pytest.approx(8.0 / 3.0)

    def test_matches_two_pass(self, rng):
        X = rng.normal(3.0, 2.0, (5000, 5))
        stats = RunningStats.from_array(X)
        np.testing.assert_allclose(stats.mean, X.mean(axis=0), rtol=1e-10)
        np.testing.assert_allclose(stats.variance, X.var(axis=0), rtol=1e-9)

    def test_large_offset_is_stable(self, rng):
        X = 1e6 + rng.normal(0.0, 1.0, (2000, 2))
        stats = RunningStats.from_array(X)
        np.testing.assert_allclose(stats.variance, X.var(axis=0), rtol=1e-6)

    def test_empty_standardize_is_identity(self):
        stats = RunningStats(3)
        x = np.array([1.5, -2.0, 0.25])
        np.testing.assert_allclose(stats.standardize(x), x)

    def test_single_sample_only_centers(self):
        stats = RunningStats(2).update([1.0, 2.0])
        np.testing.assert_allclose(stats.standardize([3.0, 2.0]), [2.0, 0.0])

    def test_constant_feature_stays_finite(self):
        stats = RunningStats(1)
        for _ in range(10):
            stats.update([5.0])
        assert stats.variance[0] == 0.0
        assert stats.standardize([5.0])[0] == 0.0
        assert np.isfinite(stats.standardize([6.0])[0])

    def test_standardized_moments(self, rng):
        X = rng.normal(-4.0, 7.0, (3000, 4))
        stats = RunningStats.from_array(X)
        Z = stats.standardize_batch(X)
        np.testing.assert_allclose(Z.mean(axis=0), 0.0, atol=1e-4)
        np.testing.assert_allclose(Z.std(axis=0), 1.0, atol=1e-4)

    def test_batch_matches_single(self, rng):
        stats = RunningStats.from_array(rng.normal(size=(50, 3)))
        X = rng.normal(size=(4, 3))
        batch = stats.standardize_batch(X)
        for i in range(4):
            np.testing.assert_array_equal(batch[i], stats.standardize(X[i]))

    def test_wrong_length(self):
        with pytest.raises(ShapeError):
            RunningStats(3).update([1.0, 2.0])

    def test_zero_features(self):
        with pytest.raises(ShapeError):
            RunningStats(0)

    def test_state_size_is_constant(self, rng):
        stats = RunningStats(5)
        size = len(stats.to_bytes())
        for row in rng.normal(size=(100, 5)):
            stats.update(row)
        assert len(stats.to_bytes()) == size == 8 + 2 * 5 * 8

    def test_copy_is_independent(self):
        stats = RunningStats(1).update([1.0])
        snapshot = stats.copy()
        stats.update([3.0])
        assert snapshot.n == 1
        assert snapshot.mean[0] == 1.0

    def test_permuted_streams_agree(self, rng):
        X = rng.normal(2.0, 5.0, (4000, 3))
        forward = RunningStats.from_array(X)
        shuffled = RunningStats.from_array(X[rng.permutation(len(X))])
        np.testing.assert_allclose(shuffled.mean, forward.mean, rtol=1e-6)
        np.testing.assert_allclose(shuffled.variance, forward.variance, rtol=1e-6)

    def test_extend_matches_update(self, rng):
        X = rng.normal(size=(300, 4))
        one_by_one = RunningStats(4)
        for row in X:
            one_by_one.update(row)
        extended = RunningStats(4).extend(X[:100]).extend(X[100:])
        assert extended.n == one_by_one.n
        np.testing.assert_array_equal(extended.mean, one_by_one.mean)
        np.testing.assert_array_equal(extended.m2, one_by_one.m2)

    def test_extend_accepts_scalar_stream(self):
        stats = RunningStats(1).extend([2.0, 4.0, 6.0])
        assert stats.mean[0] == pytest.approx(4.0)
        assert stats.variance[0] == pytest.approx(8.0 / 3.0)

    def test_extend_wrong_width(self):
        with pytest.raises(ShapeError):
            RunningStats(2).extend(np.zeros((5, 3)))

    def test_million_value_stream(self, rng):
        values = rng.normal(3.0, 2.0, 10 ** 6)
        start = time.perf_counter()
        stats = RunningStats(1).extend(values)
        elapsed = time.perf_counter() - start
        assert elapsed < 5.0
        assert stats.n == 10 ** 6
        assert abs(stats.mean[0] - values.mean()) < 1e-9
        assert abs(stats.variance[0] - values.var()) < 1e-9
