"""
Numeric core: fixed-shape float32 vector/matrix helpers, activations,
the numerically stable softmax and a seeded random generator.
All model arithmetic runs in float32; accumulators elsewhere use float64.
"""
from enum import IntEnum

import numpy as np
from scipy.special import expit
from scipy.special import softmax as _scipy_softmax

from engine.errors import DomainError, ShapeError

FLOAT = np.float32


class Activation(IntEnum):
    """Layer activations. Values are the on-disk activation ids."""
    IDENTITY = 0
    RELU = 1
    SIGMOID = 2


def as_vector(values, name="vector"):
    """
    Convert values to a contiguous 1-D float32 array.

    Args:
        values: Sequence or array of reals
        name: Used in error messages

    Returns:
        np.ndarray of dtype float32
    """
    vec = np.ascontiguousarray(values, dtype=FLOAT)
    if vec.ndim != 1 or vec.size == 0:
        raise ShapeError(f"{name} must be a non-empty 1-D vector, got shape {vec.shape}")
    if not np.all(np.isfinite(vec)):
        raise DomainError(f"{name} contains NaN or Inf")
    return vec


def apply_activation(z, act):
    """
    Apply an activation elementwise (works on vectors and batches).

    Args:
        z: Pre-activation array
        act: Activation id

    Returns:
        Activated array, same dtype as z
    """
    act = Activation(act)
    if act == Activation.IDENTITY:
        return z
    if act == Activation.RELU:
        return np.maximum(z, z.dtype.type(0))
    return expit(z)


def dense_forward(W, b, x, act):
    """
    One dense layer: y[i] = act(sum_j W[i, j] * x[j] + b[i]).

    Args:
        W: (out, in) float32 weight matrix
        b: (out,) float32 bias
        x: (in,) float32 input
        act: Activation id

    Returns:
        (out,) float32 output
    """
    if W.ndim != 2 or x.ndim != 1 or b.ndim != 1:
        raise ShapeError("dense_forward expects a matrix, a bias vector and an input vector")
    if W.shape[1] != x.shape[0]:
        raise ShapeError(f"weights expect {W.shape[1]} inputs, got {x.shape[0]}")
    if b.shape[0] != W.shape[0]:
        raise ShapeError(f"bias has {b.shape[0]} entries for {W.shape[0]} outputs")
    return apply_activation(W @ x + b, act)


def softmax(z):
    """
    Max-subtracted softmax over the last axis.

    Args:
        z: Logits, shape (k,) or (n, k)

    Returns:
        Probabilities of the same shape, summing to 1 along the last axis
    """
    z = np.asarray(z)
    if z.ndim == 0 or z.shape[-1] == 0:
        raise ShapeError("softmax needs at least one logit")
    return _scipy_softmax(z, axis=-1)


def max_relative_error(analytic, numeric, floor=1e-4):
    """
    Largest elementwise relative error between two gradient estimates.

    Args:
        analytic: Analytic gradient values
        numeric: Finite-difference gradient values
        floor: Lower bound of the denominator so near-zero gradients do not dominate

    Returns:
        float
    """
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom))


class Rng:
    """Seeded random generator; identical seed gives an identical sequence on every platform."""

    MASK64 = (1 << 64) - 1

    def __init__(self, seed=0, _entropy=None):
        """
        Args:
            seed: 64-bit unsigned seed
        """
        self.seed = int(seed) & self.MASK64
        self._entropy = tuple(_entropy) if _entropy is not None else (self.seed,)
        self.generator = np.random.Generator(np.random.PCG64(np.random.SeedSequence(list(self._entropy))))

    def child(self, *keys):
        """
        Derive an independent generator from this seed plus integer keys.
        The result does not depend on how much of this generator was consumed.
        """
        return Rng(self.seed, _entropy=self._entropy + tuple(int(k) for k in keys))

    def normal(self, mean=0.0, std=1.0, size=None):
        """Gaussian draws (float64)."""
        if std < 0:
            raise DomainError(f"std must be >= 0, got {std}")
        # std == 0 still consumes a draw and yields exactly mean
        return mean + std * self.generator.standard_normal(size)

    def uniform(self, low=0.0, high=1.0, size=None):
        """Uniform draws in [low, high)."""
        return self.generator.uniform(low, high, size)

    def integers(self, low, high=None, size=None):
        """Integer draws in [low, high)."""
        return self.generator.integers(low, high, size)

    def permutation(self, n):
        """Random permutation of range(n)."""
        return self.generator.permutation(n)


def rng_normal(rng, mean, std, size=None):
    """
    Draw normal variates and advance the generator.

    Args:
        rng: Rng instance
        mean: Distribution mean
        std: Standard deviation (>= 0); 0 returns exactly mean
        size: None for a single float, otherwise the shape of a float64 array

    Returns:
        float or np.ndarray
    """
    if size is None:
        return float(rng.normal(mean, std))
    return rng.normal(mean, std, size)
