"""
Frozen model.
An immutable dense network (the flashed-array analogue) with full, encoder-only
and truncated forward passes, the PCA + min-max preprocessing block, and the
TOLM / TOLP binary formats.
"""
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from engine.errors import DomainError, FormatError, ShapeError, UnsupportedError
from engine.numeric_core import FLOAT, Activation, apply_activation, dense_forward
from models.stream_window import N_AXES, WINDOW_LENGTH, StreamWindow
from utils.binary_io import ByteReader, ByteWriter

MODEL_MAGIC = b"TOLM"
PREPROC_MAGIC = b"TOLP"
FORMAT_VERSION = 1


def _frozen_copy(array, ndim, name):
    array = np.array(array, dtype=FLOAT, copy=True)
    if array.ndim != ndim:
        raise ShapeError(f"{name} must be {ndim}-D, got shape {array.shape}")
    if not np.all(np.isfinite(array)):
        raise DomainError(f"{name} contains NaN or Inf")
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class DenseLayer:
    """One frozen dense layer."""
    weights: np.ndarray      # (out, in)
    bias: np.ndarray         # (out,)
    activation: Activation

    def __post_init__(self):
        weights = _frozen_copy(self.weights, 2, "weights")
        bias = _frozen_copy(self.bias, 1, "bias")
        if bias.shape[0] != weights.shape[0]:
            raise ShapeError(f"bias has {bias.shape[0]} entries for {weights.shape[0]} outputs")
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "bias", bias)
        object.__setattr__(self, "activation", Activation(self.activation))

    @property
    def in_dim(self):
        return self.weights.shape[1]

    @property
    def out_dim(self):
        return self.weights.shape[0]

    def forward(self, x):
        return dense_forward(self.weights, self.bias, x, self.activation)

    def forward_batch(self, X):
        """Apply the layer to a (n, in) batch."""
        return apply_activation(X @ self.weights.T + self.bias, self.activation)


@dataclass(frozen=True, eq=False)
class FrozenModel:
    """Immutable dense network; no operation mutates it after construction."""
    layers: tuple
    embedding_index: int
    version: int = FORMAT_VERSION

    def __post_init__(self):
        layers = tuple(self.layers)
        if not layers:
            raise ShapeError("a model needs at least one layer")
        for i in range(len(layers) - 1):
            if layers[i].out_dim != layers[i + 1].in_dim:
                raise ShapeError(
                    f"layer {i} outputs {layers[i].out_dim} values but layer {i + 1} expects {layers[i + 1].in_dim}"
                )
        if not 0 <= self.embedding_index < len(layers):
            raise ShapeError(f"embedding index {self.embedding_index} outside 0..{len(layers) - 1}")
        object.__setattr__(self, "layers", layers)

    @property
    def input_dim(self):
        return self.layers[0].in_dim

    @property
    def output_dim(self):
        return self.layers[-1].out_dim

    @property
    def final_layer(self):
        return self.layers[-1]

    def run_layers(self, x, start=0, stop=None):
        """
        Run layers[start:stop] on x.

        Args:
            x: Input vector of the first layer in the slice
            start: First layer index
            stop: One past the last layer index (None = all)

        Returns:
            float32 output vector
        """
        h = np.asarray(x, dtype=FLOAT)
        if start == 0 and (h.ndim != 1 or h.shape[0] != self.input_dim):
            raise ShapeError(f"model expects {self.input_dim} inputs, got shape {h.shape}")
        for layer in self.layers[start:stop]:
            h = layer.forward(h)
        return h

    def forward(self, x):
        """Full reconstruction X' of the input."""
        return self.run_layers(x)

    def encode(self, x):
        """Embedding Z: output of the embedding layer."""
        return self.run_layers(x, stop=self.embedding_index + 1)

    def forward_truncated(self, x):
        """Output A of the penultimate layer, the input of the online regression head."""
        if len(self.layers) < 2:
            raise UnsupportedError("truncated forward needs a model with at least 2 layers")
        return self.run_layers(x, stop=len(self.layers) - 1)

    def run_layers_batch(self, X, start=0, stop=None):
        """Vectorized run_layers over a (n, dim) batch (evaluation only)."""
        H = np.asarray(X, dtype=FLOAT)
        if start == 0 and (H.ndim != 2 or H.shape[1] != self.input_dim):
            raise ShapeError(f"model expects batches of {self.input_dim} inputs, got shape {H.shape}")
        for layer in self.layers[start:stop]:
            H = layer.forward_batch(H)
        return H

    def forward_batch(self, X):
        return self.run_layers_batch(X)

    def encode_batch(self, X):
        return self.run_layers_batch(X, stop=self.embedding_index + 1)

    def __eq__(self, other):
        if not isinstance(other, FrozenModel):
            return NotImplemented
        if (self.embedding_index, self.version, len(self.layers)) != (
                other.embedding_index, other.version, len(other.layers)):
            return False
        return all(
            a.activation == b.activation
            and a.weights.shape == b.weights.shape
            and a.weights.tobytes() == b.weights.tobytes()
            and a.bias.tobytes() == b.bias.tobytes()
            for a, b in zip(self.layers, other.layers)
        )

    __hash__ = None


def reconstruction_error(x, x_hat):
    """
    Mean squared error between an input and its reconstruction.

    Args:
        x: Input vector
        x_hat: Reconstruction, same length

    Returns:
        float >= 0
    """
    x = np.asarray(x, dtype=np.float64)
    x_hat = np.asarray(x_hat, dtype=np.float64)
    if x.shape != x_hat.shape or x.ndim != 1:
        raise ShapeError(f"cannot compare shapes {x.shape} and {x_hat.shape}")
    return float(np.mean((x - x_hat) ** 2))


def reconstruction_error_batch(X, X_hat):
    """Row-wise reconstruction error for (n, dim) batches."""
    X = np.asarray(X, dtype=np.float64)
    X_hat = np.asarray(X_hat, dtype=np.float64)
    if X.shape != X_hat.shape or X.ndim != 2:
        raise ShapeError(f"cannot compare shapes {X.shape} and {X_hat.shape}")
    return np.mean((X - X_hat) ** 2, axis=1)


@dataclass(frozen=True, eq=False)
class Preproc:
    """PCA projection to one dimension followed by clamped min-max scaling."""
    pca_mean: np.ndarray     # (3,) g units
    pca_axis: np.ndarray     # (3,) unit norm
    minmax_lo: float
    minmax_hi: float

    def __post_init__(self):
        mean = _frozen_copy(self.pca_mean, 1, "pca_mean")
        axis = _frozen_copy(self.pca_axis, 1, "pca_axis")
        if mean.shape != (N_AXES,) or axis.shape != (N_AXES,):
            raise ShapeError("pca_mean and pca_axis must have 3 entries")
        norm = float(np.linalg.norm(axis.astype(np.float64)))
        if abs(norm - 1.0) > 1e-6:
            raise DomainError(f"pca_axis must have unit norm, got {norm}")
        lo, hi = FLOAT(self.minmax_lo), FLOAT(self.minmax_hi)
        if not (np.isfinite(lo) and np.isfinite(hi)) or hi <= lo:
            raise DomainError(f"need minmax_hi > minmax_lo, got [{lo}, {hi}]")
        object.__setattr__(self, "pca_mean", mean)
        object.__setattr__(self, "pca_axis", axis)
        object.__setattr__(self, "minmax_lo", lo)
        object.__setattr__(self, "minmax_hi", hi)

    def project(self, samples):
        """PCA projection s_t of (..., 3) samples."""
        return (np.asarray(samples, dtype=FLOAT) - self.pca_mean) @ self.pca_axis

    def apply(self, samples):
        """
        Project and scale one (40, 3) window or an (n, 40, 3) batch into [0, 1].

        Returns:
            float32 array of shape (40,) or (n, 40)
        """
        scaled = (self.project(samples) - self.minmax_lo) / (self.minmax_hi - self.minmax_lo)
        return np.clip(scaled, FLOAT(0), FLOAT(1)).astype(FLOAT)

    def apply_batch(self, windows):
        """Preprocess a list of StreamWindows into an (n, 40) float32 array."""
        if not windows:
            return np.zeros((0, WINDOW_LENGTH), dtype=FLOAT)
        return self.apply(np.stack([w.samples for w in windows]))

    def __eq__(self, other):
        if not isinstance(other, Preproc):
            return NotImplemented
        return (self.pca_mean.tobytes() == other.pca_mean.tobytes()
                and self.pca_axis.tobytes() == other.pca_axis.tobytes()
                and self.minmax_lo == other.minmax_lo
                and self.minmax_hi == other.minmax_hi)

    __hash__ = None


def preprocess(preproc, window):
    """
    Turn a raw window into the 40-value model input.

    Args:
        preproc: Fitted Preproc
        window: StreamWindow (or a (40, 3) array)

    Returns:
        (40,) float32 vector in [0, 1]
    """
    samples = window.samples if isinstance(window, StreamWindow) else np.asarray(window)
    if samples.shape != (WINDOW_LENGTH, N_AXES):
        raise ShapeError(f"window must be {WINDOW_LENGTH}x{N_AXES}, got {samples.shape}")
    return preproc.apply(samples)


def save_model(model):
    """Serialize a FrozenModel to TOLM bytes."""
    out = ByteWriter()
    out.magic(MODEL_MAGIC)
    out.pack("BBBB", FORMAT_VERSION, len(model.layers), model.embedding_index, 0)
    for layer in model.layers:
        out.pack("HHB", layer.in_dim, layer.out_dim, int(layer.activation))
        out.floats(layer.weights)
        out.floats(layer.bias)
    return out.getvalue()


def load_model(data):
    """
    Parse TOLM bytes into a FrozenModel.
    No partial model is ever returned: any problem raises FormatError.
    """
    reader = ByteReader(data)
    reader.expect_magic(MODEL_MAGIC)
    version_offset = reader.offset
    version, layer_count, embedding_index, _reserved = reader.unpack("BBBB")
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported model version {version}", version_offset)
    if layer_count == 0:
        raise FormatError("model has no layers", version_offset + 1)
    if embedding_index >= layer_count:
        raise FormatError(f"embedding index {embedding_index} >= layer count {layer_count}", version_offset + 2)

    layers = []
    for i in range(layer_count):
        header_offset = reader.offset
        in_dim, out_dim, act_id = reader.unpack("HHB")
        if in_dim == 0 or out_dim == 0:
            raise FormatError(f"layer {i} has a zero dimension", header_offset)
        if layers and layers[-1].out_dim != in_dim:
            raise FormatError(
                f"layer {i} expects {in_dim} inputs but previous layer outputs {layers[-1].out_dim}",
                header_offset,
            )
        try:
            activation = Activation(act_id)
        except ValueError:
            raise FormatError(f"layer {i} has unknown activation {act_id}", header_offset + 4) from None
        weights = reader.floats(out_dim * in_dim, (out_dim, in_dim))
        bias = reader.floats(out_dim)
        try:
            layers.append(DenseLayer(weights, bias, activation))
        except DomainError as e:
            raise FormatError(f"layer {i}: {e}", header_offset) from None
    reader.expect_end()
    return FrozenModel(tuple(layers), embedding_index, version)


def save_preproc(preproc):
    """Serialize a Preproc to TOLP bytes."""
    out = ByteWriter()
    out.magic(PREPROC_MAGIC)
    out.pack("B", FORMAT_VERSION)
    out.floats(preproc.pca_mean)
    out.floats(preproc.pca_axis)
    out.floats([preproc.minmax_lo, preproc.minmax_hi])
    return out.getvalue()


def load_preproc(data):
    """Parse TOLP bytes into a Preproc."""
    reader = ByteReader(data)
    reader.expect_magic(PREPROC_MAGIC)
    version_offset = reader.offset
    version = reader.unpack("B")
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported preproc version {version}", version_offset)
    body_offset = reader.offset
    mean = reader.floats(N_AXES)
    axis = reader.floats(N_AXES)
    lo, hi = reader.floats(2)
    reader.expect_end()
    try:
        return Preproc(mean, axis, lo, hi)
    except (DomainError, ShapeError) as e:
        raise FormatError(f"invalid preprocessing block: {e}", body_offset) from None


def write_model_file(path, model):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(save_model(model))
    logging.info(f"Model written to {path} ({len(model.layers)} layers)")
    return path


def read_model_file(path):
    return load_model(Path(path).read_bytes())


def write_preproc_file(path, preproc):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(save_preproc(preproc))
    logging.info(f"Preprocessing written to {path}")
    return path


def read_preproc_file(path):
    return load_preproc(Path(path).read_bytes())
