"""
Online heads: the trainable layer attached to a frozen network.

RegressionHead replaces the frozen model's sigmoid output layer and is
fine-tuned on its own input (self-supervised reconstruction).
SoftmaxHead classifies extracted features and grows a class at a time.
Both consume exactly one sample per update; nothing is buffered.
"""
import logging
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Optional, Union

import numpy as np
from scipy.special import expit, logsumexp

from engine.errors import (CapacityError, DomainError, FormatError, LabelError, ShapeError,
                           UnsupportedError, UnsupportedPairingError)
from engine.numeric_core import FLOAT, Activation, as_vector, dense_forward, max_relative_error, rng_normal, softmax
from utils.binary_io import ByteReader, ByteWriter

HEAD_MAGIC = b"TOLH"
HEAD_VERSION = 1
MAX_CLASSES = 255
PROB_CLAMP = 1e-7


class GradRule(Enum):
    """Per-output delta used by the regression head update."""
    BCE = "bce"                      # (x' - x), exact for cross-entropy through a sigmoid
    MSE_SIGMOID = "mse-sigmoid"      # (x' - x) x' (1 - x'), exact for squared error
    DOUBLE_SIGMOID = "paper-literal"  # (x' - x) s(x') (1 - s(x')), s applied to the output again

    @classmethod
    def _missing_(cls, value):
        if isinstance(value, str) and value in GRAD_RULE_ALIASES:
            return cls(GRAD_RULE_ALIASES[value])
        return None


GRAD_RULE_ALIASES = {"double-sigmoid": GradRule.DOUBLE_SIGMOID.value}
GRAD_RULE_NAMES = [rule.value for rule in GradRule] + list(GRAD_RULE_ALIASES)
GRAD_RULE_CODES = [GradRule.BCE, GradRule.MSE_SIGMOID, GradRule.DOUBLE_SIGMOID]


class HeadKind(Enum):
    REGRESSION = 0
    SOFTMAX = 1


@dataclass
class LabeledFeatures:
    """One streaming sample for a head: features plus an optional label or target."""
    features: np.ndarray
    label: Optional[Union[int, np.ndarray]] = None

    @property
    def has_label(self):
        return self.label is not None


def bce_loss(x_prime, target):
    """Mean binary cross-entropy over outputs, predictions clamped to [1e-7, 1 - 1e-7]."""
    p = np.clip(np.asarray(x_prime, dtype=np.float64), PROB_CLAMP, 1.0 - PROB_CLAMP)
    t = np.asarray(target, dtype=np.float64)
    return float(-np.mean(t * np.log(p) + (1.0 - t) * np.log(1.0 - p)))


def regression_delta(x_prime, target, rule):
    """
    Per-output delta for the regression update.

    Args:
        x_prime: Head output (after sigmoid)
        target: Target vector in [0, 1]
        rule: GradRule

    Returns:
        Array of deltas, same dtype as x_prime
    """
    error = x_prime - target
    if rule == GradRule.BCE:
        return error
    if rule == GradRule.MSE_SIGMOID:
        return error * x_prime * (1 - x_prime)
    s = expit(x_prime)
    return error * s * (1 - s)


def regression_gradients(W, b, a, target, rule):
    """
    Gradients of one regression sample with respect to W and b.
    Dtype-generic so the gradient check can run it on promoted float64 values.

    Returns:
        (grad_W, grad_b, x_prime)
    """
    x_prime = expit(W @ a + b)
    delta = regression_delta(x_prime, target, rule)
    return np.outer(delta, a), delta, x_prime


def softmax_gradients(W, b, f, y):
    """
    Gradients of the softmax cross-entropy for one sample.

    Returns:
        (grad_W, grad_b, probabilities)
    """
    p = softmax(W @ f + b)
    g = p.copy()
    g[y] -= 1
    return np.outer(g, f), g, p


def _check_alpha(alpha):
    alpha = float(alpha)
    if not np.isfinite(alpha) or alpha < 0:
        raise DomainError(f"learning rate must be a finite non-negative number, got {alpha}")
    # stored at checkpoint precision so a reloaded head behaves identically
    return float(FLOAT(alpha))


class RegressionHead:
    """Sigmoid output layer trained with single-sample SGD."""

    def __init__(self, weights, bias=None, alpha=0.01, grad_rule=GradRule.BCE, use_bias=True):
        """
        Args:
            weights: (out, in) initial weights
            bias: (out,) initial bias (zeros when None or when use_bias is False)
            alpha: Learning rate
            grad_rule: GradRule or its string value
            use_bias: Whether the bias takes part in training and prediction
        """
        self.weights = np.array(weights, dtype=FLOAT, copy=True)
        if self.weights.ndim != 2:
            raise ShapeError(f"weights must be 2-D, got shape {self.weights.shape}")
        self.use_bias = bool(use_bias)
        if bias is None or not self.use_bias:
            self.bias = np.zeros(self.weights.shape[0], dtype=FLOAT)
        else:
            self.bias = np.array(bias, dtype=FLOAT, copy=True)
        if self.bias.shape != (self.weights.shape[0],):
            raise ShapeError(f"bias must have {self.weights.shape[0]} entries, got {self.bias.shape}")
        self.alpha = _check_alpha(alpha)
        self.grad_rule = GradRule(grad_rule)

    @classmethod
    def from_layer(cls, layer, **kwargs):
        """Start from a copy of a frozen sigmoid layer's weights and bias."""
        if layer.activation != Activation.SIGMOID:
            raise UnsupportedError(f"regression head replaces a sigmoid layer, got {layer.activation.name}")
        return cls(layer.weights, layer.bias, **kwargs)

    @classmethod
    def random_init(cls, in_dim, out_dim, rng, std=0.05, **kwargs):
        """Normal(0, std) weights and zero bias."""
        weights = rng_normal(rng, 0.0, std, (out_dim, in_dim)).astype(FLOAT)
        return cls(weights, np.zeros(out_dim, dtype=FLOAT), **kwargs)

    @property
    def in_dim(self):
        return self.weights.shape[1]

    @property
    def out_dim(self):
        return self.weights.shape[0]

    def _check_input(self, a):
        a = as_vector(a, "activations")
        if a.shape != (self.in_dim,):
            raise ShapeError(f"head expects {self.in_dim} activations, got shape {a.shape}")
        return a

    def predict(self, a):
        """x' = sigmoid(W a + b), every component in (0, 1)."""
        return dense_forward(self.weights, self.bias, self._check_input(a), Activation.SIGMOID)

    def gradients(self, a, target):
        """Float32 gradients for one sample; see regression_gradients."""
        a = self._check_input(a)
        target = np.asarray(target, dtype=FLOAT)
        if target.shape != (self.out_dim,):
            raise ShapeError(f"target must have {self.out_dim} values, got shape {target.shape}")
        if np.any(target < 0) or np.any(target > 1):
            raise DomainError("regression targets must lie in [0, 1]")
        return regression_gradients(self.weights, self.bias, a, target, self.grad_rule)

    def update(self, a, target):
        """
        One SGD step on a single (activation, target) pair.

        Returns:
            Mean cross-entropy loss of the prediction made before the step
        """
        grad_w, grad_b, x_prime = self.gradients(a, target)
        step = FLOAT(self.alpha)
        self.weights -= step * grad_w
        if self.use_bias:
            self.bias -= step * grad_b
        return bce_loss(x_prime, target)

    def copy(self):
        return RegressionHead(self.weights, self.bias, self.alpha, self.grad_rule, self.use_bias)


class SoftmaxHead:
    """Softmax regression over a fixed feature vector with a growable class count."""

    def __init__(self, n_features=5, alpha=0.01, use_bias=True, n_classes=1, weights=None, bias=None):
        """
        Args:
            n_features: Feature vector length d
            alpha: Learning rate
            use_bias: Whether per-class biases are trained
            n_classes: Initial class count k (>= 1), ignored when weights are given
            weights: Optional (k, d) initial weights
            bias: Optional (k,) initial bias
        """
        if weights is None:
            if not 1 <= n_classes <= MAX_CLASSES:
                raise CapacityError(f"class count must be in 1..{MAX_CLASSES}, got {n_classes}")
            weights = np.zeros((n_classes, n_features), dtype=FLOAT)
        self.weights = np.array(weights, dtype=FLOAT, copy=True)
        if self.weights.ndim != 2 or not 1 <= self.weights.shape[0] <= MAX_CLASSES:
            raise ShapeError(f"softmax weights must be (k, d) with 1 <= k <= {MAX_CLASSES}")
        self.use_bias = bool(use_bias)
        if bias is None or not self.use_bias:
            self.bias = np.zeros(self.weights.shape[0], dtype=FLOAT)
        else:
            self.bias = np.array(bias, dtype=FLOAT, copy=True)
        if self.bias.shape != (self.weights.shape[0],):
            raise ShapeError(f"bias must have {self.weights.shape[0]} entries")
        self.alpha = _check_alpha(alpha)

    @property
    def k(self):
        return self.weights.shape[0]

    @property
    def d(self):
        return self.weights.shape[1]

    def _check_features(self, f):
        f = as_vector(f, "features")
        if f.shape != (self.d,):
            raise ShapeError(f"head expects {self.d} features, got shape {f.shape}")
        return f

    def logits(self, f):
        return self.weights @ self._check_features(f) + self.bias

    def predict(self, f):
        """Class probabilities, length k, summing to 1."""
        return softmax(self.logits(f))

    def predict_batch(self, F):
        """Probabilities for an (n, d) batch."""
        F = np.asarray(F, dtype=FLOAT)
        if F.ndim != 2 or F.shape[1] != self.d:
            raise ShapeError(f"expected batches of {self.d} features, got shape {F.shape}")
        return softmax(F @ self.weights.T + self.bias)

    def gradients(self, f, y):
        """Float32 gradients for one labelled sample; see softmax_gradients."""
        f = self._check_features(f)
        if isinstance(y, (bool, np.bool_)) or not isinstance(y, (int, np.integer)) or not 0 <= y < self.k:
            raise LabelError(f"label {y!r} is not a class of this head (k={self.k}); add the class first")
        return softmax_gradients(self.weights, self.bias, f, int(y))

    def update(self, f, y):
        """
        One SGD step on a single (features, label) pair.

        Returns:
            -log p_y of the prediction made before the step (p_y clamped at 1e-7)
        """
        grad_w, grad_b, p = self.gradients(f, y)
        step = FLOAT(self.alpha)
        self.weights -= step * grad_w
        if self.use_bias:
            self.bias -= step * grad_b
        return float(-np.log(max(float(p[int(y)]), PROB_CLAMP)))

    def add_class(self):
        """
        Append a zero-initialized class; existing rows are left untouched.

        Returns:
            Index of the new class
        """
        if self.k >= MAX_CLASSES:
            raise CapacityError(f"softmax head is limited to {MAX_CLASSES} classes")
        self.weights = np.vstack([self.weights, np.zeros((1, self.d), dtype=FLOAT)])
        self.bias = np.append(self.bias, FLOAT(0))
        logging.info(f"Softmax head grew to {self.k} classes")
        return self.k - 1

    def copy(self):
        return SoftmaxHead(self.d, self.alpha, self.use_bias, weights=self.weights, bias=self.bias)


def _regression_loss64(W, b, a, target, rule):
    z = W @ a + b
    if rule == GradRule.BCE:
        # -[t log s(z) + (1 - t) log(1 - s(z))] summed over outputs
        return float(np.sum(target * np.logaddexp(0.0, -z) + (1.0 - target) * np.logaddexp(0.0, z)))
    return float(0.5 * np.sum((expit(z) - target) ** 2))


def _softmax_loss64(W, b, f, y):
    z = W @ f + b
    return float(logsumexp(z) - z[y])


def _central_differences(loss, params, step):
    """Central differences of loss() with respect to every entry of each array in params."""
    grads = []
    for param in params:
        grad = np.zeros_like(param)
        for idx in np.ndindex(param.shape):
            original = param[idx]
            param[idx] = original + step
            upper = loss()
            param[idx] = original - step
            lower = loss()
            param[idx] = original
            grad[idx] = (upper - lower) / (2.0 * step)
        grads.append(grad)
    return grads


def grad_check(pairing, rng, n_instances=100, step=1e-3, in_dim=8, out_dim=6, n_features=5, max_classes=5):
    """
    Compare a head's analytic gradient with central finite differences of its loss.

    Parameters are drawn as float32 and promoted to float64 for both the
    analytic rule and the loss evaluations.

    Args:
        pairing: "bce", "mse-sigmoid" or "softmax" (GradRule values accepted)
        rng: Rng instance
        n_instances: Random heads/samples to check
        step: Finite-difference step

    Returns:
        Max relative error over all checked coordinates
    """
    name = pairing.value if isinstance(pairing, GradRule) else str(pairing)
    if name == "softmax":
        return _grad_check_softmax(rng, n_instances, step, n_features, max_classes)
    try:
        rule = GradRule(name)
    except ValueError:
        raise UnsupportedPairingError(f"unknown gradient pairing {name!r}") from None
    if rule == GradRule.DOUBLE_SIGMOID:
        raise UnsupportedPairingError("the literal sigmoid-derivative rule is not the exact gradient of any loss")
    return _grad_check_regression(rule, rng, n_instances, step, in_dim, out_dim)


def _grad_check_regression(rule, rng, n_instances, step, in_dim, out_dim):
    worst = 0.0
    for _ in range(n_instances):
        W = rng.normal(0.0, 0.5, (out_dim, in_dim)).astype(FLOAT).astype(np.float64)
        b = rng.normal(0.0, 0.5, out_dim).astype(FLOAT).astype(np.float64)
        a = rng.uniform(0.0, 1.0, in_dim).astype(FLOAT).astype(np.float64)
        target = rng.uniform(0.0, 1.0, out_dim).astype(FLOAT).astype(np.float64)
        grad_w, grad_b, _ = regression_gradients(W, b, a, target, rule)
        num_w, num_b = _central_differences(lambda: _regression_loss64(W, b, a, target, rule), [W, b], step)
        worst = max(worst, max_relative_error(grad_w, num_w), max_relative_error(grad_b, num_b))
    logging.info(f"Gradient check {rule.value}: max relative error {worst:.3e}")
    return worst


def _grad_check_softmax(rng, n_instances, step, n_features, max_classes):
    worst = 0.0
    for _ in range(n_instances):
        k = int(rng.integers(1, max_classes + 1))
        W = rng.normal(0.0, 0.5, (k, n_features)).astype(FLOAT).astype(np.float64)
        b = rng.normal(0.0, 0.5, k).astype(FLOAT).astype(np.float64)
        f = rng.normal(0.0, 1.0, n_features).astype(FLOAT).astype(np.float64)
        y = int(rng.integers(0, k))
        grad_w, grad_b, _ = softmax_gradients(W, b, f, y)
        num_w, num_b = _central_differences(lambda: _softmax_loss64(W, b, f, y), [W, b], step)
        worst = max(worst, max_relative_error(grad_w, num_w), max_relative_error(grad_b, num_b))
    logging.info(f"Gradient check softmax: max relative error {worst:.3e}")
    return worst


def save_head(head):
    """
    Serialize a head to TOLH bytes (little-endian).

    Layout: magic "TOLH"; u8 version, u8 kind (0 regression, 1 softmax),
    u8 flags (bit 0 bias enabled, bits 1+ gradient rule index for regression),
    u8 reserved; then the dims, u16 in + u16 out for regression or
    u8 k + u8 d + u16 padding for softmax; f32 alpha; f32 weights row-major;
    f32 bias.

    This extends the plain "version, kind, k, d, alpha" header with the flags
    and reserved bytes and pads the softmax dims to four bytes, so a reader of
    the plain header will not parse these files.
    """
    out = ByteWriter()
    out.magic(HEAD_MAGIC)
    if isinstance(head, RegressionHead):
        flags = int(head.use_bias) | (GRAD_RULE_CODES.index(head.grad_rule) << 1)
        out.pack("BBBB", HEAD_VERSION, HeadKind.REGRESSION.value, flags, 0)
        out.pack("HH", head.in_dim, head.out_dim)
    elif isinstance(head, SoftmaxHead):
        out.pack("BBBB", HEAD_VERSION, HeadKind.SOFTMAX.value, int(head.use_bias), 0)
        out.pack("BBH", head.k, head.d, 0)
    else:
        raise UnsupportedError(f"cannot serialize {type(head).__name__}")
    out.pack("f", head.alpha)
    out.floats(head.weights)
    out.floats(head.bias)
    return out.getvalue()


def load_head(data):
    """Parse TOLH bytes into a RegressionHead or SoftmaxHead."""
    reader = ByteReader(data)
    reader.expect_magic(HEAD_MAGIC)
    header_offset = reader.offset
    version, kind, flags, _reserved = reader.unpack("BBBB")
    if version != HEAD_VERSION:
        raise FormatError(f"unsupported head version {version}", header_offset)
    dims_offset = reader.offset
    if kind == HeadKind.REGRESSION.value:
        in_dim, out_dim = reader.unpack("HH")
        rule_code = flags >> 1
        if rule_code >= len(GRAD_RULE_CODES):
            raise FormatError(f"unknown gradient rule code {rule_code}", header_offset + 2)
        rows, cols = out_dim, in_dim
    elif kind == HeadKind.SOFTMAX.value:
        rows, cols, _pad = reader.unpack("BBH")
    else:
        raise FormatError(f"unknown head kind {kind}", header_offset + 1)
    if rows == 0 or cols == 0:
        raise FormatError("head has a zero dimension", dims_offset)
    alpha = reader.unpack("f")
    weights = reader.floats(rows * cols, (rows, cols))
    bias = reader.floats(rows)
    reader.expect_end()
    if not (np.all(np.isfinite(weights)) and np.all(np.isfinite(bias)) and np.isfinite(alpha) and alpha >= 0):
        raise FormatError("head contains non-finite values", dims_offset)
    use_bias = bool(flags & 1)
    if kind == HeadKind.REGRESSION.value:
        return RegressionHead(weights, bias, alpha, GRAD_RULE_CODES[flags >> 1], use_bias)
    return SoftmaxHead(cols, alpha, use_bias, weights=weights, bias=bias)


def write_head_file(path, head):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(save_head(head))
    logging.info(f"Head checkpoint written to {path}")
    return path


def read_head_file(path):
    return load_head(Path(path).read_bytes())
