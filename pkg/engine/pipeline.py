"""
Streaming pipeline.
Wires the frozen model, preprocessing, running statistics, an online head and
its metrics into a one-window-at-a-time predict-then-update loop.
"""
import logging
import time
from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np

from engine.errors import DomainError, LabelGapError
from engine.online_head import GradRule, LabeledFeatures, RegressionHead, SoftmaxHead, save_head
from engine.streaming_stats import RunningStats
from models.frozen_model import preprocess, reconstruction_error
from utils.metrics import DEFAULT_BINS, ConfusionMatrix, MseAccumulator

MIN_BENCH_WINDOWS = 100


class PipelineMode(Enum):
    FINE_TUNE = "fine-tune"
    CLASSIFY = "classify"


class BenchMode(Enum):
    INFERENCE = "inference"
    ONLINE = "online"


@dataclass
class StepReport:
    """Outcome of one processed window; fields that do not apply stay None."""
    step: int
    mode: PipelineMode
    mse: float
    loss: Optional[float] = None
    predicted_class: Optional[int] = None
    true_class: Optional[int] = None
    k: Optional[int] = None

    CSV_HEADER = ("step", "mode", "mse", "loss", "predicted_class", "true_class", "k")

    def to_csv_row(self):
        values = (self.step, self.mode.value, self.mse, self.loss,
                  self.predicted_class, self.true_class, self.k)
        return ["" if v is None else v for v in values]


class Pipeline:
    """One-sample-at-a-time online learning loop for either use case."""

    def __init__(self, model, preproc, head, mode, metrics, stats=None, learning_enabled=True):
        """
        Args:
            model: FrozenModel
            preproc: Preproc
            head: RegressionHead (fine-tune) or SoftmaxHead (classify)
            mode: PipelineMode
            metrics: MseAccumulator (fine-tune) or ConfusionMatrix (classify)
            stats: RunningStats over the classification features (classify only)
            learning_enabled: Whether labelled windows update the head
        """
        self.model = model
        self.preproc = preproc
        self.head = head
        self.mode = PipelineMode(mode)
        self.metrics = metrics
        self.stats = stats
        self.learning_enabled = bool(learning_enabled)
        self.step = 0
        if self.mode == PipelineMode.CLASSIFY and self.stats is None:
            self.stats = RunningStats(head.d)

    @classmethod
    def for_fine_tune(cls, model, preproc, alpha=0.01, grad_rule=GradRule.BCE, use_bias=True,
                      random_init=False, rng=None, histogram_max=1.0, n_bins=DEFAULT_BINS):
        """
        Replace the model's final layer with a trainable regression head.

        Args:
            random_init: Start from Normal(0, 0.05) weights instead of the frozen layer (needs rng)
            histogram_max: Upper edge of the MSE histogram
        """
        if random_init:
            final = model.final_layer
            head = RegressionHead.random_init(final.in_dim, final.out_dim, rng, alpha=alpha,
                                              grad_rule=grad_rule, use_bias=use_bias)
        else:
            head = RegressionHead.from_layer(model.final_layer, alpha=alpha, grad_rule=grad_rule,
                                             use_bias=use_bias)
        return cls(model, preproc, head, PipelineMode.FINE_TUNE, MseAccumulator(histogram_max, n_bins))

    @classmethod
    def for_classification(cls, model, preproc, alpha=0.01, use_bias=True):
        """Softmax head over embedding + reconstruction error, starting with one class."""
        d = model.layers[model.embedding_index].out_dim + 1
        head = SoftmaxHead(d, alpha=alpha, use_bias=use_bias, n_classes=1)
        return cls(model, preproc, head, PipelineMode.CLASSIFY, ConfusionMatrix(1), RunningStats(d))

    def enable_learning(self):
        self.learning_enabled = True
        logging.info("Online learning enabled")

    def disable_learning(self):
        self.learning_enabled = False
        logging.info("Online learning disabled")

    def classification_features(self, x):
        """Unscaled features: embedding followed by the frozen reconstruction error."""
        z = self.model.encode(x)
        e = reconstruction_error(x, self.model.forward(x))
        return np.append(z.astype(np.float64), e)

    def process_sample(self, window):
        """
        Predict on one window, then learn from it if learning is enabled.

        Args:
            window: StreamWindow; in classify mode its mode field is the label

        Returns:
            StepReport whose prediction precedes this window's update
        """
        x = preprocess(self.preproc, window)
        if self.mode == PipelineMode.FINE_TUNE:
            report = self._fine_tune_step(x)
        else:
            report = self._classify_step(x, window.mode)
        self.step += 1
        logging.debug(f"Step {report.step}: {report}")
        return report

    def _fine_tune_step(self, x):
        a = self.model.forward_truncated(x)
        x_prime = self.head.predict(a)
        mse = reconstruction_error(x, x_prime)
        self.metrics.record(mse)
        loss = None
        if self.learning_enabled:
            # self-supervised: the target is the input itself
            sample = LabeledFeatures(a, x)
            loss = self.head.update(sample.features, sample.label)
        return StepReport(self.step, self.mode, mse, loss)

    def _classify_step(self, x, label):
        label = None if label is None else int(label)
        f_raw = self.classification_features(x)
        if label is not None and label > self.head.k:
            raise LabelGapError(f"label {label} skips classes (current k={self.head.k}); "
                                "classes must first appear in order 0, 1, 2, ...")
        if self.learning_enabled:
            self.stats.update(f_raw)
            if label is not None and label == self.head.k:
                self.head.add_class()
        sample = LabeledFeatures(self.stats.standardize(f_raw), label)
        p = self.head.predict(sample.features)
        predicted = int(np.argmax(p))
        loss = None
        if sample.has_label:
            self.metrics.record(predicted, sample.label)
            if self.learning_enabled:
                loss = self.head.update(sample.features, int(sample.label))
        return StepReport(self.step, self.mode, float(f_raw[-1]), loss, predicted, sample.label, self.head.k)

    def state_bytes(self):
        """Serialized learning state (stats and head); metric counters excluded."""
        stats = self.stats.to_bytes() if self.stats is not None else b""
        return stats + save_head(self.head)

    def clone(self):
        """Independent copy sharing the immutable model and preproc."""
        metrics = self.metrics
        if isinstance(metrics, ConfusionMatrix):
            copied = ConfusionMatrix(metrics.k)
            copied.counts = metrics.counts.copy()
        else:
            copied = MseAccumulator(metrics.edges[-1], metrics.counts.size, metrics.threshold)
        twin = Pipeline(self.model, self.preproc, self.head.copy(), self.mode, copied,
                        self.stats.copy() if self.stats is not None else None, self.learning_enabled)
        twin.step = self.step
        return twin


@dataclass(frozen=True)
class TimingSummary:
    """Per-iteration wall-clock statistics in microseconds."""
    mode: BenchMode
    average: float
    median: float
    minimum: float
    maximum: float
    iterations: int

    CSV_HEADER = ("mode", "average_us", "median_us", "minimum_us", "maximum_us")

    @classmethod
    def from_nanoseconds(cls, mode, durations):
        us = np.asarray(durations, dtype=np.float64) / 1e3
        return cls(BenchMode(mode), float(us.mean()), float(np.median(us)),
                   float(us.min()), float(us.max()), int(us.size))

    def to_csv_row(self):
        return [self.mode.value, self.average, self.median, self.minimum, self.maximum]


def bench_iteration(pipeline, windows, mode):
    """
    Time process_sample per window on a clone of the pipeline.

    Args:
        pipeline: Pipeline to clone (left untouched)
        windows: Iterable of StreamWindows (at least 100)
        mode: BenchMode.INFERENCE (learning off) or BenchMode.ONLINE (learning on)

    Returns:
        TimingSummary
    """
    mode = BenchMode(mode)
    runner = pipeline.clone()
    runner.learning_enabled = mode == BenchMode.ONLINE
    durations = []
    for window in windows:
        start = time.perf_counter_ns()
        runner.process_sample(window)
        durations.append(time.perf_counter_ns() - start)
    if len(durations) < MIN_BENCH_WINDOWS:
        raise DomainError(f"benchmark needs at least {MIN_BENCH_WINDOWS} windows, got {len(durations)}")
    summary = TimingSummary.from_nanoseconds(mode, durations)
    logging.info(f"Bench {mode.value}: avg {summary.average:.1f} us, median {summary.median:.1f} us "
                 f"over {summary.iterations} iterations")
    return summary
