"""
Offline trainer.
Desk-side minibatch backpropagation that produces the frozen autoencoder,
and the batch-trained softmax baseline the online classifier is compared with.
"""
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np
from scipy.special import logsumexp

from engine.errors import ConvergenceError, DomainError, FitError, LabelError, ShapeError, UnsupportedError
from engine.numeric_core import FLOAT, Activation, Rng, apply_activation, max_relative_error, rng_normal, softmax
from engine.online_head import SoftmaxHead
from models.frozen_model import DenseLayer, FrozenModel

REFERENCE_DIMS = (40, 16, 4, 16, 40)
REFERENCE_EMBEDDING_INDEX = 1
MIN_AUTOENCODER_WINDOWS = 500
PROB_CLAMP = 1e-7
HEAD_INPUT_RMS = 1.0


class LossKind(Enum):
    MSE = "mse"
    BCE = "bce"


@dataclass
class TrainConfig:
    """Hyper-parameters of one offline training run."""
    epochs: int = 200
    batch_size: int = 32
    alpha: float = 0.05
    seed: int = 0
    loss: LossKind = LossKind.MSE

    def __post_init__(self):
        if self.epochs < 0:
            raise DomainError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise DomainError(f"batch_size must be positive, got {self.batch_size}")
        if not self.alpha > 0:
            raise DomainError(f"alpha must be positive, got {self.alpha}")
        self.loss = LossKind(self.loss)


@dataclass
class Dataset:
    """Training inputs (one row per window or feature vector) with optional dense labels."""
    inputs: np.ndarray
    labels: Optional[np.ndarray] = None

    def __post_init__(self):
        inputs = np.array(self.inputs, dtype=FLOAT, copy=True)
        if inputs.ndim != 2 or inputs.shape[0] == 0:
            raise ShapeError(f"inputs must be a non-empty (n, dim) array, got shape {inputs.shape}")
        if not np.all(np.isfinite(inputs)):
            raise DomainError("inputs contain NaN or Inf")
        inputs.setflags(write=False)
        self.inputs = inputs
        if self.labels is not None:
            labels = np.array(self.labels, dtype=np.int64, copy=True)
            if labels.shape != (inputs.shape[0],):
                raise ShapeError("need exactly one label per input")
            if labels.min() < 0 or np.unique(labels).size != labels.max() + 1:
                raise LabelError("labels must densely cover 0..k-1")
            labels.setflags(write=False)
            self.labels = labels

    def __len__(self):
        return self.inputs.shape[0]

    @property
    def n_classes(self):
        return 0 if self.labels is None else int(self.labels.max()) + 1


@dataclass
class TrainResult:
    """Trained model (FrozenModel or SoftmaxHead) and its per-epoch mean training loss."""
    model: object
    loss_curve: list = field(default_factory=list)


def init_reference_model(rng, dims=REFERENCE_DIMS, embedding_index=REFERENCE_EMBEDDING_INDEX):
    """
    Randomly initialized dense autoencoder: relu hidden layers, a linear
    embedding layer and a sigmoid output. He-normal weights for relu layers,
    Xavier-normal for the others, zero biases.

    Args:
        rng: Rng instance
        dims: Layer widths, input first
        embedding_index: Layer whose output is the embedding

    Returns:
        FrozenModel
    """
    layers = []
    n_layers = len(dims) - 1
    for i, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:])):
        if i == n_layers - 1:
            act = Activation.SIGMOID
        elif i == embedding_index:
            act = Activation.IDENTITY
        else:
            act = Activation.RELU
        std = np.sqrt(2.0 / fan_in) if act == Activation.RELU else np.sqrt(2.0 / (fan_in + fan_out))
        weights = rng_normal(rng, 0.0, std, (fan_out, fan_in)).astype(FLOAT)
        layers.append(DenseLayer(weights, np.zeros(fan_out, dtype=FLOAT), act))
    return FrozenModel(tuple(layers), embedding_index)


def _activation_slope(out, act):
    """Derivative of an activation expressed through its output."""
    if act == Activation.RELU:
        return (out > 0).astype(out.dtype)
    if act == Activation.SIGMOID:
        return out * (1 - out)
    return np.ones_like(out)


def forward_cache(params, X):
    """All layer outputs for a batch; params is a list of [W, b, act]."""
    hs = [X]
    for W, b, act in params:
        hs.append(apply_activation(hs[-1] @ W.T + b, act))
    return hs


def reconstruction_loss(out, X, loss):
    """Batch mean of the per-sample summed loss."""
    n = X.shape[0]
    if loss == LossKind.MSE:
        return float(0.5 * np.sum((out.astype(np.float64) - X) ** 2) / n)
    p = np.clip(out.astype(np.float64), PROB_CLAMP, 1 - PROB_CLAMP)
    return float(-np.sum(X * np.log(p) + (1 - X) * np.log(1 - p)) / n)


def backprop_gradients(params, X, loss=LossKind.MSE):
    """
    Gradients of reconstruction_loss with respect to every W and b.

    Returns:
        (list of (grad_W, grad_b), layer outputs)
    """
    hs = forward_cache(params, X)
    out = hs[-1]
    n = X.shape[0]
    final_act = params[-1][2]
    if loss == LossKind.BCE:
        if final_act != Activation.SIGMOID:
            raise UnsupportedError("cross-entropy reconstruction needs a sigmoid output layer")
        delta = (out - X) / n
    else:
        delta = (out - X) * _activation_slope(out, final_act) / n
    grads = [None] * len(params)
    for i in reversed(range(len(params))):
        W = params[i][0]
        grads[i] = (delta.T @ hs[i], delta.sum(axis=0))
        if i > 0:
            delta = (delta @ W) * _activation_slope(hs[i], params[i - 1][2])
    return grads, hs


def _check_convergence(curve, what):
    if len(curve) < 2 or curve[0] <= 1e-12:
        return
    if curve[-1] >= curve[0]:
        raise ConvergenceError(f"{what} loss did not decrease ({curve[0]:.6g} -> {curve[-1]:.6g})", curve)
    if curve[-1] > 0.5 * curve[0]:
        logging.warning(f"{what} loss fell by only {100 * (1 - curve[-1] / curve[0]):.1f}%")


def _batches(rng, n, batch_size):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


def _log_epoch(what, epoch, epochs, loss):
    if epochs >= 10 and (epoch + 1) % (epochs // 10) != 0:
        return
    logging.info(f"{what} epoch {epoch + 1}/{epochs}: mean loss {loss:.6g}")


def train_autoencoder(data, cfg, rng=None):
    """
    Minibatch SGD on the reconstruction loss of the reference autoencoder.

    Args:
        data: Dataset of preprocessed windows (values in [0, 1]); labels ignored
        cfg: TrainConfig
        rng: Optional Rng; defaults to one seeded from cfg.seed

    Returns:
        TrainResult holding the FrozenModel and the per-epoch loss curve
    """
    if len(data) < MIN_AUTOENCODER_WINDOWS:
        raise DomainError(f"autoencoder training needs at least {MIN_AUTOENCODER_WINDOWS} windows, got {len(data)}")
    if data.inputs.shape[1] != REFERENCE_DIMS[0]:
        raise ShapeError(f"autoencoder inputs must have {REFERENCE_DIMS[0]} values")
    if data.inputs.min() < 0 or data.inputs.max() > 1:
        raise DomainError("autoencoder inputs must lie in [0, 1]")
    if cfg.batch_size > len(data):
        raise DomainError(f"batch size {cfg.batch_size} exceeds dataset size {len(data)}")
    rng = rng or Rng(cfg.seed)
    model = init_reference_model(rng.child(0))
    params = [[layer.weights.copy(), layer.bias.copy(), layer.activation] for layer in model.layers]
    shuffler = rng.child(1)
    step = FLOAT(cfg.alpha)
    curve = []
    for epoch in range(cfg.epochs):
        total, seen = 0.0, 0
        for idx in _batches(shuffler, len(data), cfg.batch_size):
            X = data.inputs[idx]
            grads, hs = backprop_gradients(params, X, cfg.loss)
            total += reconstruction_loss(hs[-1], X, cfg.loss) * len(idx)
            seen += len(idx)
            for p, (grad_w, grad_b) in zip(params, grads):
                p[0] -= step * grad_w
                p[1] -= step * grad_b
        curve.append(total / seen)
        _log_epoch("Autoencoder", epoch, cfg.epochs, curve[-1])
    _check_convergence(curve, "Autoencoder")
    trained = FrozenModel(tuple(DenseLayer(W, b, act) for W, b, act in params), model.embedding_index)
    return TrainResult(trained, curve)


def scale_head_input(model, X, target_rms=HEAD_INPUT_RMS):
    """
    Rescale the penultimate layer so its activations have a root-mean-square
    of target_rms per unit over X, compensating in the final layer.

    The penultimate activation must be positively homogeneous (relu or
    identity), so the full forward pass is unchanged up to float32 rounding.
    The online regression head replaces the final layer and learns on these
    activations, so their scale sets its effective step size.

    Args:
        model: Trained FrozenModel
        X: (n, input_dim) preprocessed windows
        target_rms: Wanted root-mean-square activation per unit

    Returns:
        FrozenModel
    """
    if len(model.layers) < 2:
        raise UnsupportedError("rescaling the head input needs a model with at least 2 layers")
    if not target_rms > 0:
        raise DomainError(f"target_rms must be positive, got {target_rms}")
    penultimate, final = model.layers[-2], model.layers[-1]
    if penultimate.activation not in (Activation.RELU, Activation.IDENTITY):
        raise UnsupportedError(f"cannot rescale through a {penultimate.activation.name} layer")
    A = model.run_layers_batch(X, stop=len(model.layers) - 1).astype(np.float64)
    rms = float(np.sqrt(np.mean(A ** 2)))
    if rms <= 0:
        raise FitError("the penultimate layer is silent on every window")
    scale = rms / target_rms
    layers = model.layers[:-2] + (
        DenseLayer(penultimate.weights / scale, penultimate.bias / scale, penultimate.activation),
        DenseLayer(final.weights * scale, final.bias, final.activation),
    )
    logging.info(f"Head input rescaled by {1 / scale:.4g} (activation RMS {rms:.4g} -> {target_rms:g})")
    return FrozenModel(layers, model.embedding_index, model.version)


def train_softmax_offline(data, cfg, rng=None):
    """
    Minibatch softmax regression on pre-extracted, standardized features.

    Args:
        data: Dataset with labels
        cfg: TrainConfig (loss is ignored; always cross-entropy)

    Returns:
        TrainResult holding the SoftmaxHead and the per-epoch loss curve
    """
    if data.labels is None:
        raise LabelError("offline softmax training needs labels")
    if cfg.batch_size > len(data):
        raise DomainError(f"batch size {cfg.batch_size} exceeds dataset size {len(data)}")
    rng = rng or Rng(cfg.seed)
    head = SoftmaxHead(data.inputs.shape[1], alpha=cfg.alpha, n_classes=data.n_classes)
    onehot = np.eye(head.k, dtype=FLOAT)[data.labels]
    shuffler = rng.child(2)
    step = FLOAT(cfg.alpha)
    curve = []
    for epoch in range(cfg.epochs):
        total = 0.0
        for idx in _batches(shuffler, len(data), cfg.batch_size):
            F = data.inputs[idx]
            logits = F @ head.weights.T + head.bias
            total += float(np.sum(logsumexp(logits, axis=1) - logits[np.arange(len(idx)), data.labels[idx]]))
            G = (softmax(logits) - onehot[idx]) / FLOAT(len(idx))
            head.weights -= step * (G.T @ F)
            head.bias -= step * G.sum(axis=0)
        curve.append(total / len(data))
        _log_epoch("Softmax baseline", epoch, cfg.epochs, curve[-1])
    _check_convergence(curve, "Softmax baseline")
    return TrainResult(head, curve)


def _relu_masks(params, hs):
    return [hs[i + 1] > 0 for i, (_, _, act) in enumerate(params) if act == Activation.RELU]


def backprop_grad_check(rng, dims=(4, 3, 2, 3, 4), n_instances=100, batch=3, step=1e-5, loss=LossKind.MSE):
    """
    Compare backprop gradients of a tiny random network with central differences.

    Parameters are drawn as float32 and promoted to float64. Coordinates whose
    perturbation flips a relu on or off are skipped (the loss has a kink there).

    Returns:
        Max relative error over the checked coordinates
    """
    worst = 0.0
    checked = 0
    for _ in range(n_instances):
        model = init_reference_model(rng, dims, embedding_index=len(dims) // 2 - 1)
        params = [[layer.weights.astype(np.float64),
                   rng.normal(0.0, 0.1, layer.out_dim).astype(FLOAT).astype(np.float64),
                   layer.activation] for layer in model.layers]
        X = rng.uniform(0.0, 1.0, (batch, dims[0])).astype(FLOAT).astype(np.float64)
        grads, hs = backprop_gradients(params, X, loss)
        masks = _relu_masks(params, hs)
        for p, analytic in zip(params, grads):
            for tensor, grad in zip(p[:2], analytic):
                for idx in np.ndindex(tensor.shape):
                    original = tensor[idx]
                    tensor[idx] = original + step
                    hs_up = forward_cache(params, X)
                    tensor[idx] = original - step
                    hs_down = forward_cache(params, X)
                    tensor[idx] = original
                    flipped = any(
                        not np.array_equal(m, up) or not np.array_equal(m, down)
                        for m, up, down in zip(masks, _relu_masks(params, hs_up), _relu_masks(params, hs_down))
                    )
                    if flipped:
                        continue
                    numeric = (reconstruction_loss(hs_up[-1], X, loss)
                               - reconstruction_loss(hs_down[-1], X, loss)) / (2 * step)
                    worst = max(worst, max_relative_error(grad[idx], numeric))
                    checked += 1
    logging.info(f"Backprop gradient check: max relative error {worst:.3e} over {checked} coordinates")
    return worst
