"""
Stream window model.
One 40-step, 3-axis raw vibration window: the unit of streaming.
"""
from dataclasses import dataclass
from typing import Optional

import numpy as np

from engine.errors import DomainError, ShapeError

WINDOW_LENGTH = 40  # timesteps per window (about 0.34 s at 119 Hz)
N_AXES = 3
SAMPLE_RATE_HZ = 119.0


@dataclass(frozen=True)
class StreamWindow:
    """A raw accelerometer window in g units, with optional ground-truth mode."""
    samples: np.ndarray          # (40, 3) float32
    mode: Optional[int] = None   # 0 normal, 1 stuck, 2 tilted
    index: int = 0               # window position in its stream

    def __post_init__(self):
        samples = np.ascontiguousarray(self.samples, dtype=np.float32)
        if samples.shape != (WINDOW_LENGTH, N_AXES):
            raise ShapeError(f"window must be {WINDOW_LENGTH}x{N_AXES}, got {samples.shape}")
        if not np.all(np.isfinite(samples)):
            raise DomainError("window contains NaN or Inf")
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)

    @property
    def first_timestep(self):
        """Global timestep of the first sample."""
        return self.index * WINDOW_LENGTH

    def with_samples(self, samples):
        """Copy of this window with different samples."""
        return StreamWindow(samples, self.mode, self.index)

    def with_label(self, mode):
        """Copy of this window with a different label (None drops it)."""
        return StreamWindow(self.samples, mode, self.index)
