"""Tests for the confusion matrix, F1 scores, MSE accumulator and anomaly threshold."""
import numpy as np
import pytest

from engine.errors import DomainError, UndefinedMetricError
from utils.metrics import AnomalyThreshold, ConfusionMatrix, MseAccumulator


def two_class_matrix():
    # truth 0: 5 right; truth 1: 2 predicted as 0, 3 right
    cm = ConfusionMatrix(2)
    for _ in range(5):
        cm.record(0, 0)
    for _ in range(2):
        cm.record(0, 1)
    for _ in range(3):
        cm.record(1, 1)
    return cm


class TestConfusionMatrix:

    def test_hand_evaluation(self):
        cm = two_class_matrix()
        np.testing.assert_array_equal(cm.counts, [[5, 0], [2, 3]])
        np.testing.assert_allclose(cm.f1_per_class(), [5 / 6, 3 / 4])
        assert cm.macro_f1() == pytest.approx(19 / 24)

    def test_perfect_predictions(self):
        cm = ConfusionMatrix.from_predictions([0, 1, 2, 1], [0, 1, 2, 1])
        assert cm.macro_f1() == 1.0

    def test_from_predictions_matches_record(self):
        cm = ConfusionMatrix.from_predictions([0, 0, 0, 0, 0, 0, 0, 1, 1, 1], [0, 0, 0, 0, 0, 1, 1, 1, 1, 1])
        np.testing.assert_array_equal(cm.counts, two_class_matrix().counts)

    def test_grows_on_new_class(self):
        cm = ConfusionMatrix(1)
        cm.record(0, 0)
        cm.record(0, 2)
        assert cm.k == 3
        assert cm.counts[0, 0] == 1 and cm.counts[2, 0] == 1
        assert cm.total == 2

    def test_absent_class_scores_zero(self):
        cm = ConfusionMatrix(3)
        cm.record(0, 0)
        np.testing.assert_array_equal(cm.f1_per_class(), [1.0, 0.0, 0.0])

    def test_macro_over_more_classes(self):
        cm = ConfusionMatrix.from_predictions([0, 1], [0, 1])
        assert cm.macro_f1(classes=4) == pytest.approx(0.5)

    def test_macro_in_unit_interval(self, rng):
        cm = ConfusionMatrix.from_predictions(rng.integers(0, 3, 200), rng.integers(0, 3, 200))
        assert 0.0 <= cm.macro_f1() <= 1.0

    def test_empty_is_undefined(self):
        with pytest.raises(UndefinedMetricError):
            ConfusionMatrix(2).macro_f1()

    def test_negative_class(self):
        with pytest.raises(DomainError):
            ConfusionMatrix(2).record(-1, 0)

    def test_rows(self):
        rows = two_class_matrix().rows()
        assert (1, 0, 2) in rows
        assert sum(count for _, _, count in rows) == 10


class TestMseAccumulator:

    def test_mean_and_extremes(self):
        acc = MseAccumulator(1.0, 10)
        acc.record_many([0.1, 0.2, 0.3])
        assert acc.n == 3
        assert acc.mean == pytest.approx(0.2)
        assert (acc.minimum, acc.maximum) == (0.1, 0.3)

    def test_bins_and_overflow(self):
        acc = MseAccumulator(1.0, 4)
        acc.record_many([0.0, 0.3, 1.0, 2.5])
        rows = acc.histogram_rows()
        assert [count for _, _, count in rows] == [1, 1, 0, 1, 1]
        assert rows[-1][1] == float("inf")
        assert acc.overflow == 1

    def test_counts_sum_to_samples(self, rng):
        acc = MseAccumulator(0.5, 50)
        acc.record_many(rng.uniform(0.0, 1.0, 500))
        assert sum(count for _, _, count in acc.histogram_rows()) == 500

    def test_negative_value(self):
        with pytest.raises(DomainError):
            MseAccumulator(1.0).record(-0.1)

    def test_alarm_rate(self):
        acc = MseAccumulator(1.0, threshold=0.5)
        acc.record_many([0.1, 0.6, 0.7, 0.2])
        assert acc.alarm_rate == 0.5
        assert acc.summary()["alarm_rate"] == 0.5
        assert acc.summary()["threshold"] == 0.5

    def test_alarm_rate_matches_threshold_rate(self, rng):
        values = rng.uniform(0.0, 1.0, 400)
        threshold = AnomalyThreshold(0.3)
        acc = MseAccumulator(1.0, threshold=threshold)
        acc.record_many(values)
        assert acc.threshold is threshold
        assert acc.alarm_rate == pytest.approx(threshold.rate(values))

    def test_empty_summary(self):
        with pytest.raises(UndefinedMetricError):
            MseAccumulator(1.0).summary()


class TestAnomalyThreshold:

    def test_from_normal(self):
        acc = MseAccumulator(1.0)
        acc.record_many([0.1, 0.3])
        threshold = AnomalyThreshold.from_normal(acc, n_sigma=2.0)
        assert threshold.value == pytest.approx(0.2 + 2.0 * 0.1)
        assert threshold.is_anomaly(0.41)
        assert not threshold.is_anomaly(0.39)

    def test_rate(self):
        assert AnomalyThreshold(0.5).rate([0.1, 0.6, 0.9, 0.2]) == 0.5

    def test_empty_accumulator(self):
        with pytest.raises(UndefinedMetricError):
            AnomalyThreshold.from_normal(MseAccumulator(1.0))
