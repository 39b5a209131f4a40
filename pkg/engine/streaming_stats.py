"""
Running per-feature mean and variance with one-pass Welford updates,
and streaming standardization of feature vectors.
"""
import struct

import numpy as np

from engine.errors import ShapeError
from engine.numeric_core import FLOAT

EPSILON = 1e-8


class RunningStats:
    """Cumulative Welford statistics; state size does not grow with the sample count."""

    def __init__(self, n_features):
        """
        Args:
            n_features: Length of every vector passed to update/standardize
        """
        if n_features < 1:
            raise ShapeError(f"need at least one feature, got {n_features}")
        self.n_features = int(n_features)
        self.n = 0
        self.mean = np.zeros(self.n_features, dtype=np.float64)
        self.m2 = np.zeros(self.n_features, dtype=np.float64)

    def _check(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.n_features,):
            raise ShapeError(f"expected {self.n_features} features, got shape {x.shape}")
        return x

    def update(self, x):
        """
        Fold one sample into the statistics.

        Args:
            x: Feature vector

        Returns:
            self (updated in place)
        """
        x = self._check(x)
        self.n += 1
        delta = x - self.mean
        self.mean += delta / self.n
        self.m2 += delta * (x - self.mean)
        return self

    def extend(self, rows):
        """
        Fold many samples in order with the same recurrence as update.

        The loop runs over plain floats rather than numpy scalars.

        Args:
            rows: (n, features) array, or a 1-D array when there is one feature

        Returns:
            self (updated in place)
        """
        X = np.asarray(rows, dtype=np.float64)
        if X.ndim == 1 and self.n_features == 1:
            X = X[:, None]
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise ShapeError(f"expected rows of {self.n_features} features, got shape {X.shape}")
        n = self.n
        if self.n_features == 1:
            mean, m2 = float(self.mean[0]), float(self.m2[0])
            for x in X[:, 0].tolist():
                n += 1
                delta = x - mean
                mean += delta / n
                m2 += delta * (x - mean)
            means, m2s = [mean], [m2]
        else:
            means, m2s = self.mean.tolist(), self.m2.tolist()
            for row in X.tolist():
                n += 1
                for j, x in enumerate(row):
                    delta = x - means[j]
                    means[j] += delta / n
                    m2s[j] += delta * (x - means[j])
        self.n = n
        self.mean = np.array(means, dtype=np.float64)
        self.m2 = np.array(m2s, dtype=np.float64)
        return self

    @property
    def variance(self):
        """Population variance; ones before the first sample."""
        if self.n == 0:
            return np.ones(self.n_features, dtype=np.float64)
        return np.maximum(self.m2 / self.n, 0.0)

    @property
    def std(self):
        return np.sqrt(self.variance)

    def _scale(self):
        # n < 2 treats the variance as 1
        if self.n < 2:
            return np.ones(self.n_features, dtype=np.float64)
        return np.sqrt(self.variance + EPSILON)

    def standardize(self, x):
        """
        Scale a feature vector by the running mean and variance.

        Returns:
            float32 vector (x - mean) / sqrt(var + eps)
        """
        x = self._check(x)
        return ((x - self.mean) / self._scale()).astype(FLOAT)

    def standardize_batch(self, X):
        """Standardize an (n, features) batch with the current statistics."""
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise ShapeError(f"expected batches of {self.n_features} features, got shape {X.shape}")
        return ((X - self.mean) / self._scale()).astype(FLOAT)

    def copy(self):
        """Independent snapshot of the current state."""
        snapshot = RunningStats(self.n_features)
        snapshot.n = self.n
        snapshot.mean = self.mean.copy()
        snapshot.m2 = self.m2.copy()
        return snapshot

    def to_bytes(self):
        """Serialized state: u64 n, then float64 means and m2."""
        return (struct.pack("<Q", self.n)
                + self.mean.astype("<f8").tobytes()
                + self.m2.astype("<f8").tobytes())

    @classmethod
    def from_array(cls, X):
        """Statistics of an (n, features) array, folded one row at a time."""
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2:
            raise ShapeError(f"expected an (n, features) array, got shape {X.shape}")
        return cls(X.shape[1]).extend(X)
