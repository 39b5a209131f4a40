"""
Synthetic USB-fan accelerometer.
Generates 3-axis vibration windows for the normal, stuck and tilted fan modes,
injects board-repositioning drift, and fits the PCA + min-max preprocessing.
"""
import logging
from dataclasses import dataclass
from enum import IntEnum

import numpy as np
from scipy.spatial.transform import Rotation

from engine.errors import DomainError, FitError, ShapeError
from engine.numeric_core import FLOAT, Rng, rng_normal
from models.frozen_model import Preproc
from models.stream_window import N_AXES, SAMPLE_RATE_HZ, WINDOW_LENGTH, StreamWindow

FAN_FREQ_HZ = 20.0
WOBBLE_RATIO = 0.5          # tilted wobble frequency relative to the fan frequency
WOBBLE_GAIN = 0.4
# rotating imbalance: the in-plane axes run in quadrature
AXIS_PHASES = np.array([0.0, np.pi / 2, np.pi / 2])
MIN_FIT_WINDOWS = 100


class FanMode(IntEnum):
    """Ground-truth classes, in first-seen order of the classification stream."""
    NORMAL = 0
    STUCK = 1
    TILTED = 2


@dataclass(frozen=True)
class FanProfile:
    amplitudes: tuple      # per-axis vibration amplitude in g
    noise_std: float       # Gaussian sensor noise in g
    dc_offset: tuple = (0.0, 0.0, 0.0)
    wobble: bool = False
    spinning: bool = True


PROFILES = {
    FanMode.NORMAL: FanProfile((0.3, 0.2, 0.1), 0.02),
    FanMode.STUCK: FanProfile((0.0, 0.0, 0.0), 0.05, dc_offset=(0.45, -0.1, 0.2), spinning=False),
    FanMode.TILTED: FanProfile((0.5, 0.1, 0.4), 0.03, wobble=True),
}


class StreamKey(IntEnum):
    """Independent random streams so corpora never share draws."""
    TRAIN = 0
    TEST = 1
    FINETUNE = 2
    EVAL = 3
    CLASSIFY = 4
    BENCH = 5


@dataclass(frozen=True)
class DriftConfig:
    """Rigid re-mounting of the sensor: Euler rotation, gain and offset."""
    rotation_deg: tuple = (0.0, 0.0, 0.0)
    gain: float = 1.0
    offset: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        rotation = tuple(float(v) for v in self.rotation_deg)
        offset = tuple(float(v) for v in self.offset)
        if len(rotation) != 3 or len(offset) != 3:
            raise ShapeError("drift rotation and offset need 3 values each")
        if not np.all(np.isfinite(rotation + offset)) or not np.isfinite(self.gain):
            raise DomainError("drift values must be finite")
        if self.gain <= 0:
            raise DomainError(f"drift gain must be positive, got {self.gain}")
        object.__setattr__(self, "rotation_deg", rotation)
        object.__setattr__(self, "offset", offset)
        object.__setattr__(self, "gain", float(self.gain))

    @classmethod
    def identity(cls):
        return cls()

    @classmethod
    def default(cls):
        return cls((5.0, 5.0, 5.0), 1.05, (0.02, 0.0, 0.0))

    @classmethod
    def parse(cls, text):
        """
        Parse "rx,ry,rz,gain,ox,oy,oz".

        Args:
            text: Seven comma-separated numbers

        Returns:
            DriftConfig
        """
        try:
            values = [float(part) for part in str(text).split(",")]
        except ValueError:
            raise DomainError(f"drift must be 7 comma-separated numbers, got {text!r}") from None
        if len(values) != 7:
            raise DomainError(f"drift must be 7 comma-separated numbers, got {len(values)}")
        return cls(tuple(values[:3]), values[3], tuple(values[4:]))

    def to_text(self):
        return ",".join(f"{v:g}" for v in (*self.rotation_deg, self.gain, *self.offset))

    @property
    def is_identity(self):
        return self.rotation_deg == (0.0, 0.0, 0.0) and self.gain == 1.0 and self.offset == (0.0, 0.0, 0.0)

    def rotation_matrix(self):
        return Rotation.from_euler("xyz", self.rotation_deg, degrees=True).as_matrix()


def apply_drift(window, drift):
    """
    Map every sample to gain * R @ sample + offset.

    Args:
        window: StreamWindow
        drift: DriftConfig (None or identity returns the window itself)

    Returns:
        StreamWindow
    """
    if drift is None or drift.is_identity:
        return window
    samples = window.samples.astype(np.float64)
    moved = drift.gain * samples @ drift.rotation_matrix().T + np.asarray(drift.offset)
    return window.with_samples(moved.astype(FLOAT))


def sample_times(index):
    """Timestamps in seconds of the 40 samples of window `index`."""
    return (index * WINDOW_LENGTH + np.arange(WINDOW_LENGTH)) / SAMPLE_RATE_HZ


def generate_window(mode, rng, drift=None, index=0, noise_scale=1.0):
    """
    Generate one raw window.

    Args:
        mode: FanMode or 0/1/2
        rng: Rng used for the sensor noise
        drift: Optional DriftConfig
        index: Window position in its stream (sets the signal phase)
        noise_scale: Multiplier on the profile's noise (0 = noise-free)

    Returns:
        StreamWindow labelled with mode
    """
    try:
        mode = FanMode(mode)
    except ValueError:
        raise DomainError(f"unknown fan mode {mode!r}") from None
    if noise_scale < 0:
        raise DomainError(f"noise_scale must be >= 0, got {noise_scale}")
    profile = PROFILES[mode]
    t = sample_times(index)[:, None]
    amplitudes = np.asarray(profile.amplitudes)
    signal = np.zeros((WINDOW_LENGTH, N_AXES))
    if profile.spinning:
        signal = amplitudes * np.sin(2 * np.pi * FAN_FREQ_HZ * t + AXIS_PHASES)
        if profile.wobble:
            signal += WOBBLE_GAIN * amplitudes * np.sin(2 * np.pi * WOBBLE_RATIO * FAN_FREQ_HZ * t + AXIS_PHASES)
    noise = rng_normal(rng, 0.0, profile.noise_std * noise_scale, (WINDOW_LENGTH, N_AXES))
    samples = np.asarray(profile.dc_offset) + signal + noise
    window = StreamWindow(samples.astype(FLOAT), int(mode), index)
    return apply_drift(window, drift)


class FanSimulator:
    """Seeded window source; window i of a stream depends only on (seed, stream, mode, drift, i)."""

    def __init__(self, seed=0, stream=StreamKey.TRAIN, drift=None, noise_scale=1.0):
        self.root = Rng(seed)
        self.stream = int(stream)
        self.drift = drift
        self.noise_scale = noise_scale

    def window(self, mode, index):
        rng = self.root.child(self.stream, int(mode), index)
        return generate_window(mode, rng, self.drift, index, self.noise_scale)

    def windows(self, mode, count, start=0):
        """Consecutive windows of one mode."""
        for index in range(start, start + count):
            yield self.window(mode, index)

    def class_blocks(self, per_block, passes, n_classes=len(FanMode)):
        """
        Labelled stream presenting the classes block by block: all of class 0,
        then class 1, ..., repeated `passes` times.
        """
        index = 0
        for _ in range(passes):
            for mode in range(n_classes):
                for _ in range(per_block):
                    yield self.window(mode, index)
                    index += 1


def _top_eigenvector(cov, iterations=100, tol=1e-10):
    v = np.ones(N_AXES) / np.sqrt(N_AXES)
    for _ in range(iterations):
        w = cov @ v
        norm = np.linalg.norm(w)
        if norm == 0:
            # start vector orthogonal to the data; restart on the widest axis
            w = np.eye(N_AXES)[np.argmax(np.diag(cov))]
            norm = 1.0
        w = w / norm
        if np.linalg.norm(w - v) < tol:
            v = w
            break
        v = w
    return v


def fit_preproc(windows, lower_pct=0.5, upper_pct=99.5):
    """
    Fit PCA to one dimension plus percentile min-max bounds.

    Args:
        windows: Iterable of StreamWindows (at least 100)

    Returns:
        Preproc
    """
    blocks = [w.samples for w in windows]
    if len(blocks) < MIN_FIT_WINDOWS:
        raise DomainError(f"preprocessing fit needs at least {MIN_FIT_WINDOWS} windows, got {len(blocks)}")
    X = np.concatenate(blocks).astype(np.float64)
    mean = X.mean(axis=0)
    cov = np.cov(X - mean, rowvar=False, bias=True)
    if np.trace(cov) <= 1e-20:
        raise FitError("corpus has no variance; cannot fit a projection axis")
    axis = _top_eigenvector(cov)
    if axis[np.argmax(np.abs(axis))] < 0:
        axis = -axis
    projected = (X - mean) @ axis
    lo, hi = np.percentile(projected, [lower_pct, upper_pct])
    if hi <= lo:
        raise FitError(f"projected values have no spread ({lo} .. {hi})")
    logging.info(f"Preprocessing fitted on {len(blocks)} windows: axis {np.round(axis, 4)}, range [{lo:.4f}, {hi:.4f}]")
    return Preproc(mean.astype(FLOAT), axis.astype(FLOAT), float(lo), float(hi))
