"""
Streaming evaluation: confusion matrix with per-class and macro F1,
and a fixed-size accumulator for reconstruction-error distributions.
"""
import logging
from dataclasses import dataclass

import numpy as np

from engine.errors import DomainError, ShapeError, UndefinedMetricError
from engine.streaming_stats import RunningStats

DEFAULT_BINS = 50


def _safe_ratio(num, den):
    # 0/0 counts as 0
    num = np.asarray(num, dtype=np.float64)
    den = np.asarray(den, dtype=np.float64)
    out = np.zeros_like(num)
    np.divide(num, den, out=out, where=den > 0)
    return out


class ConfusionMatrix:
    """Integer counts, rows = truth, columns = prediction; grows when a new class is seen."""

    def __init__(self, k=1):
        if k < 1:
            raise ShapeError(f"confusion matrix needs at least one class, got {k}")
        self.counts = np.zeros((k, k), dtype=np.int64)

    @property
    def k(self):
        return self.counts.shape[0]

    @property
    def total(self):
        return int(self.counts.sum())

    def _grow(self, k):
        if k <= self.k:
            return
        grown = np.zeros((k, k), dtype=np.int64)
        grown[:self.k, :self.k] = self.counts
        self.counts = grown

    def record(self, predicted, truth):
        """Add one (prediction, truth) pair."""
        predicted, truth = int(predicted), int(truth)
        if predicted < 0 or truth < 0:
            raise DomainError("class indices must be non-negative")
        self._grow(max(predicted, truth) + 1)
        self.counts[truth, predicted] += 1

    @classmethod
    def from_predictions(cls, predicted, truth, k=None):
        """Build a matrix from two equal-length label arrays in one pass."""
        predicted = np.asarray(predicted, dtype=np.int64)
        truth = np.asarray(truth, dtype=np.int64)
        if predicted.shape != truth.shape or predicted.ndim != 1:
            raise ShapeError("predicted and truth must be 1-D arrays of equal length")
        if predicted.size and (predicted.min() < 0 or truth.min() < 0):
            raise DomainError("class indices must be non-negative")
        seen = int(max(predicted.max(), truth.max())) + 1 if predicted.size else 1
        cm = cls(max(seen, k or 1))
        np.add.at(cm.counts, (truth, predicted), 1)
        return cm

    def f1_per_class(self):
        """
        F1 for each class.

        Returns:
            float64 array of length k, each in [0, 1]
        """
        if self.total == 0:
            raise UndefinedMetricError("F1 is undefined before any pair is recorded")
        tp = np.diag(self.counts)
        precision = _safe_ratio(tp, self.counts.sum(axis=0))
        recall = _safe_ratio(tp, self.counts.sum(axis=1))
        return _safe_ratio(2 * precision * recall, precision + recall)

    def macro_f1(self, classes=None):
        """
        Unweighted mean of per-class F1.

        Args:
            classes: Optional class count to average over; classes beyond the
                recorded ones contribute F1 = 0

        Returns:
            Macro F1 in [0, 1]
        """
        f1 = self.f1_per_class()
        if classes is not None and classes > f1.size:
            f1 = np.concatenate([f1, np.zeros(classes - f1.size)])
        return float(f1.mean())

    def rows(self):
        """(truth, predicted, count) triples for CSV export."""
        return [(t, p, int(self.counts[t, p])) for t in range(self.k) for p in range(self.k)]


class MseAccumulator:
    """Histogram plus running statistics of reconstruction errors, constant size."""

    def __init__(self, max_value, n_bins=DEFAULT_BINS, threshold=None):
        """
        Args:
            max_value: Upper edge of the last regular bin
            n_bins: Uniform bins over [0, max_value]; larger values go to an overflow bin
            threshold: Optional AnomalyThreshold (or a plain value); values above it are counted
        """
        if not np.isfinite(max_value) or max_value <= 0:
            raise DomainError(f"histogram max must be positive, got {max_value}")
        if n_bins < 1:
            raise DomainError(f"need at least one bin, got {n_bins}")
        self.edges = np.linspace(0.0, float(max_value), int(n_bins) + 1)
        self.counts = np.zeros(int(n_bins), dtype=np.int64)
        self.overflow = 0
        self.stats = RunningStats(1)
        self.minimum = np.inf
        self.maximum = -np.inf
        if threshold is not None and not isinstance(threshold, AnomalyThreshold):
            threshold = AnomalyThreshold(float(threshold))
        self.threshold = threshold
        self.exceedances = 0

    @property
    def n(self):
        return self.stats.n

    def record(self, mse):
        mse = float(mse)
        if not np.isfinite(mse) or mse < 0:
            raise DomainError(f"reconstruction error must be finite and non-negative, got {mse}")
        if mse > self.edges[-1]:
            self.overflow += 1
        else:
            # right-closed last bin
            idx = min(int(np.searchsorted(self.edges, mse, side="right")) - 1, self.counts.size - 1)
            self.counts[idx] += 1
        self.stats.update([mse])
        self.minimum = min(self.minimum, mse)
        self.maximum = max(self.maximum, mse)
        if self.threshold is not None and self.threshold.is_anomaly(mse):
            self.exceedances += 1

    def record_many(self, values):
        for value in np.ravel(values):
            self.record(value)

    @property
    def mean(self):
        return float(self.stats.mean[0])

    @property
    def std(self):
        return float(self.stats.std[0])

    @property
    def alarm_rate(self):
        if self.threshold is None:
            raise DomainError("no alarm threshold configured")
        if self.n == 0:
            raise UndefinedMetricError("alarm rate is undefined before any value is recorded")
        return self.exceedances / self.n

    def histogram_rows(self):
        """(bin_lo, bin_hi, count) rows; the overflow bin has bin_hi = inf."""
        rows = [(float(lo), float(hi), int(c)) for lo, hi, c in zip(self.edges[:-1], self.edges[1:], self.counts)]
        rows.append((float(self.edges[-1]), float("inf"), int(self.overflow)))
        return rows

    def summary(self):
        """Histogram plus count, mean, std, min and max."""
        if self.n == 0:
            raise UndefinedMetricError("summary is undefined before any value is recorded")
        summary = {
            "count": self.n,
            "mean": self.mean,
            "std": self.std,
            "min": self.minimum,
            "max": self.maximum,
            "overflow": self.overflow,
            "histogram": self.histogram_rows(),
        }
        if self.threshold is not None:
            summary["threshold"] = self.threshold.value
            summary["alarm_rate"] = self.alarm_rate
        return summary


@dataclass(frozen=True)
class AnomalyThreshold:
    """Fixed reconstruction-error threshold above which a window is flagged."""
    value: float
    n_sigma: float = 3.0

    @classmethod
    def from_normal(cls, acc, n_sigma=3.0):
        """mean + n_sigma * std of an accumulator filled with normal-data errors."""
        if acc.n == 0:
            raise UndefinedMetricError("cannot derive a threshold from an empty accumulator")
        value = acc.mean + n_sigma * acc.std
        logging.info(f"Anomaly threshold {value:.6g} (mean {acc.mean:.6g} + {n_sigma} std)")
        return cls(value, n_sigma)

    def is_anomaly(self, mse):
        return float(mse) > self.value

    def rate(self, values):
        """Fraction of values above the threshold."""
        values = np.asarray(values, dtype=np.float64)
        if values.size == 0:
            raise UndefinedMetricError("rate of an empty array")
        return float(np.mean(values > self.value))
