"""
StreamHead command line.
Runs the experiment end to end: corpus generation, autoencoder training,
drift fine-tuning, online classification, offline baselines, timing and
gradient checks. Every command writes CSV artifacts and merges its results
into <out>/run_manifest.json.
"""
import argparse
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from engine.config_manager import ConfigManager
from engine.errors import DomainError, MissingInputError, StreamHeadError
from engine.numeric_core import Rng
from engine.offline_trainer import (Dataset, backprop_grad_check, scale_head_input, train_autoencoder,
                                    train_softmax_offline)
from engine.online_head import GRAD_RULE_NAMES, GradRule, grad_check, read_head_file, write_head_file
from engine.pipeline import BenchMode, Pipeline, StepReport, TimingSummary, bench_iteration
from engine.streaming_stats import RunningStats
from models.frozen_model import (read_model_file, read_preproc_file, reconstruction_error_batch,
                                 write_model_file, write_preproc_file)
from ui.command_help import COMMAND_HELP, find_help
from utils.artifacts import read_manifest, update_manifest, write_csv
from utils.corpus_io import read_corpus, read_corpus_arrays, write_corpus
from utils.fan_simulator import FanMode, FanSimulator, StreamKey, fit_preproc
from utils.metrics import AnomalyThreshold, ConfusionMatrix, MseAccumulator

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_ACCEPTANCE = 3

GRADCHECK_TOLERANCE = 1e-3
ANOMALY_RATIO_MIN = 2.0
DRIFT_RATIO_MIN = 1.5
FINETUNE_RATIO_MAX = 1.2
ONLINE_F1_MIN = 0.8
HISTOGRAM_SPAN = 5.0        # histogram max as a multiple of the training-normal mean
HEAD_INIT_KEY = 7

HISTOGRAM_HEADER = ("bin_lo", "bin_hi", "count")
FINETUNED_HEAD = "finetuned_head.tolh"


@dataclass(frozen=True)
class RunPaths:
    """File layout of one output directory."""
    out: Path

    @property
    def corpora(self):
        return self.out / "corpora"

    @property
    def train_corpus(self):
        return self.corpora / "train_normal.csv"

    def test_corpus(self, mode):
        return self.corpora / f"test_{FanMode(mode).name.lower()}.csv"

    @property
    def model(self):
        return self.out / "model.tolm"

    @property
    def preproc(self):
        return self.out / "preproc.tolp"

    def artifact(self, name):
        return self.out / name


def _require(path, hint):
    if not Path(path).exists():
        raise MissingInputError(path, hint)
    return path


def _load_frozen(paths):
    _require(paths.model, "run `train` first")
    _require(paths.preproc, "run `train` first")
    return read_model_file(paths.model), read_preproc_file(paths.preproc)


def _frozen_errors(model, X):
    return reconstruction_error_batch(X, model.forward_batch(X))


def _raw_features(model, X):
    """Embedding plus frozen reconstruction error for a batch of preprocessed windows."""
    Z = model.encode_batch(X).astype(np.float64)
    return np.column_stack([Z, _frozen_errors(model, X)])


def _accumulate(values, max_value, bins, threshold=None):
    acc = MseAccumulator(max_value, bins, threshold)
    acc.record_many(values)
    return acc


def _training_reference(cfg, paths, model, preproc):
    """Frozen-model errors on the training corpus, with the derived alarm threshold."""
    samples, _ = read_corpus_arrays(_require(paths.train_corpus, "run `gen-data` first"))
    errors = _frozen_errors(model, preproc.apply(samples))
    mean = float(errors.mean())
    acc = _accumulate(errors, HISTOGRAM_SPAN * mean, cfg.histogram_bins)
    return acc, AnomalyThreshold.from_normal(acc, cfg.anomaly_sigma)


def _test_set(paths, preproc):
    """Preprocessed test windows of all modes and their labels."""
    blocks, labels = [], []
    for mode in FanMode:
        samples, modes = read_corpus_arrays(_require(paths.test_corpus(mode), "run `gen-data` first"))
        blocks.append(preproc.apply(samples))
        labels.append(np.full(len(modes), int(mode), dtype=np.int64))
    return np.concatenate(blocks), np.concatenate(labels)


def _check(name, passed, detail):
    if passed:
        logging.info(f"Check passed: {name} ({detail})")
    else:
        logging.error(f"Check failed: {name} ({detail})")
    return passed


def cmd_gen_data(cfg):
    """Write the training corpus and one test corpus per fan mode."""
    paths = RunPaths(Path(cfg.out_dir))
    train_sim = FanSimulator(cfg.seed, StreamKey.TRAIN)
    test_sim = FanSimulator(cfg.seed, StreamKey.TEST)
    written = {"train_normal": write_corpus(paths.train_corpus, train_sim.windows(FanMode.NORMAL, cfg.train_windows))}
    artifacts = [paths.train_corpus]
    for mode in FanMode:
        path = paths.test_corpus(mode)
        written[f"test_{mode.name.lower()}"] = write_corpus(path, test_sim.windows(mode, cfg.test_windows))
        artifacts.append(path)
    update_manifest(paths.out, "gen-data", cfg.to_dict(), {"windows": written}, artifacts)
    print(f"Generated {sum(written.values())} windows in {paths.corpora}")
    return EXIT_OK


def cmd_train(cfg):
    """Fit preprocessing, train the autoencoder and measure anomaly separation."""
    paths = RunPaths(Path(cfg.out_dir))
    train_path = _require(paths.train_corpus, "run `gen-data` first")
    preproc = fit_preproc(read_corpus(train_path))
    samples, _ = read_corpus_arrays(train_path)
    X_train = preproc.apply(samples)
    result = train_autoencoder(Dataset(X_train), cfg.train_config(), Rng(cfg.seed))
    model = scale_head_input(result.model, X_train)
    artifacts = [write_model_file(paths.model, model), write_preproc_file(paths.preproc, preproc)]
    artifacts.append(write_csv(paths.artifact("loss_curve.csv"), ("epoch", "mean_loss"),
                               enumerate(result.loss_curve)))

    train_acc, threshold = _training_reference(cfg, paths, model, preproc)
    span = train_acc.edges[-1]
    X_test, labels = _test_set(paths, preproc)
    errors = _frozen_errors(model, X_test)
    normal = errors[labels == FanMode.NORMAL]
    abnormal = errors[labels != FanMode.NORMAL]
    normal_acc = _accumulate(normal, span, cfg.histogram_bins)
    abnormal_acc = _accumulate(abnormal, span, cfg.histogram_bins)
    detection, false_alarms = threshold.rate(abnormal), threshold.rate(normal)
    for name, acc in (("mse_hist_normal.csv", normal_acc), ("mse_hist_abnormal.csv", abnormal_acc)):
        artifacts.append(write_csv(paths.artifact(name), HISTOGRAM_HEADER, acc.histogram_rows()))

    ratio = abnormal_acc.mean / normal_acc.mean
    results = {
        "final_loss": result.loss_curve[-1] if result.loss_curve else None,
        "train_normal_mean_mse": train_acc.mean,
        "normal_mean_mse": normal_acc.mean,
        "abnormal_mean_mse": abnormal_acc.mean,
        "per_mode_mean_mse": {mode.name.lower(): float(errors[labels == mode].mean()) for mode in FanMode},
        "anomaly_ratio": ratio,
        "threshold": threshold.value,
        "detection_rate": detection,
        "false_alarm_rate": false_alarms,
    }
    update_manifest(paths.out, "train", cfg.to_dict(), results, artifacts)
    print(f"Abnormal/normal mean MSE ratio: {ratio:.3f} "
          f"(detection {detection:.1%}, false alarms {false_alarms:.1%})")
    passed = _check("anomaly separation", ratio >= ANOMALY_RATIO_MIN, f"ratio {ratio:.3f} >= {ANOMALY_RATIO_MIN}")
    return EXIT_OK if passed else EXIT_ACCEPTANCE


def _fine_tune_pipeline(cfg, model, preproc, span):
    return Pipeline.for_fine_tune(model, preproc, alpha=cfg.head_alpha, grad_rule=cfg.grad_rule_enum,
                                  use_bias=cfg.use_bias, random_init=cfg.random_head_init,
                                  rng=Rng(cfg.seed).child(HEAD_INIT_KEY), histogram_max=span,
                                  n_bins=cfg.histogram_bins)


def _run_bench(cfg, pipeline, paths):
    """Time both modes on the same drifted windows and write timing.csv."""
    sim = FanSimulator(cfg.seed, StreamKey.BENCH, cfg.drift_config)
    windows = list(sim.windows(FanMode.NORMAL, cfg.bench_windows))
    summaries = [bench_iteration(pipeline, windows, mode) for mode in BenchMode]
    path = write_csv(paths.artifact("timing.csv"), TimingSummary.CSV_HEADER, (s.to_csv_row() for s in summaries))
    return summaries, path


def cmd_finetune(cfg):
    """Measure drift damage, fine-tune the output layer online and measure again."""
    paths = RunPaths(Path(cfg.out_dir))
    model, preproc = _load_frozen(paths)
    train_acc, threshold = _training_reference(cfg, paths, model, preproc)
    span = train_acc.edges[-1]
    drift = cfg.drift_config
    eval_sim = FanSimulator(cfg.seed, StreamKey.EVAL, drift)

    pre_windows = list(eval_sim.windows(FanMode.NORMAL, cfg.test_windows))
    pre_acc = _accumulate(_frozen_errors(model, preproc.apply_batch(pre_windows)), span,
                          cfg.histogram_bins, threshold)
    del pre_windows

    pipeline = _fine_tune_pipeline(cfg, model, preproc, span)
    stream = FanSimulator(cfg.seed, StreamKey.FINETUNE, drift).windows(FanMode.NORMAL, cfg.iterations)
    trace = write_csv(paths.artifact("finetune_trace.csv"), StepReport.CSV_HEADER,
                      (pipeline.process_sample(w).to_csv_row() for w in stream))
    pipeline.disable_learning()

    post_acc = MseAccumulator(span, cfg.histogram_bins, threshold)
    for window in eval_sim.windows(FanMode.NORMAL, cfg.test_windows, start=cfg.test_windows):
        post_acc.record(pipeline.process_sample(window).mse)

    artifacts = [trace]
    for name, acc in (("mse_hist_pre.csv", pre_acc), ("mse_hist_finetune.csv", pipeline.metrics),
                      ("mse_hist_post.csv", post_acc)):
        artifacts.append(write_csv(paths.artifact(name), HISTOGRAM_HEADER, acc.histogram_rows()))
    artifacts.append(write_head_file(paths.artifact(FINETUNED_HEAD), pipeline.head))
    summaries, timing_path = _run_bench(cfg, pipeline, paths)
    artifacts.append(timing_path)

    reference = train_acc.mean
    pre_ratio, post_ratio = pre_acc.mean / reference, post_acc.mean / reference
    inference, online = summaries
    results = {
        "train_normal_mean_mse": reference,
        "pre_mean_mse": pre_acc.mean,
        "post_mean_mse": post_acc.mean,
        "pre_ratio": pre_ratio,
        "post_ratio": post_ratio,
        "pre_false_alarm_rate": pre_acc.alarm_rate,
        "post_false_alarm_rate": post_acc.alarm_rate,
        "timing_us": {s.mode.value: s.to_csv_row()[1:] for s in summaries},
    }
    update_manifest(paths.out, "finetune", cfg.to_dict(), results, artifacts)
    print(f"Drifted MSE {pre_ratio:.2f}x training normal before, {post_ratio:.2f}x after "
          f"{cfg.iterations} iterations; false alarms {pre_acc.alarm_rate:.1%} -> {post_acc.alarm_rate:.1%}")
    checks = [
        _check("drift visible", pre_ratio >= DRIFT_RATIO_MIN, f"{pre_ratio:.3f} >= {DRIFT_RATIO_MIN}"),
        _check("drift recovered", post_ratio <= FINETUNE_RATIO_MAX, f"{post_ratio:.3f} <= {FINETUNE_RATIO_MAX}"),
        _check("timing ordering", online.average >= inference.average,
               f"online {online.average:.1f} us >= inference {inference.average:.1f} us"),
    ]
    return EXIT_OK if all(checks) else EXIT_ACCEPTANCE


def cmd_bench(cfg):
    """Per-iteration timing of inference and online learning on drifted windows."""
    paths = RunPaths(Path(cfg.out_dir))
    model, preproc = _load_frozen(paths)
    pipeline = _fine_tune_pipeline(cfg, model, preproc, 1.0)
    head_path = paths.artifact(FINETUNED_HEAD)
    if head_path.exists():
        pipeline.head = read_head_file(head_path)
        logging.info(f"Timing the fine-tuned head from {head_path}")
    summaries, path = _run_bench(cfg, pipeline, paths)
    update_manifest(paths.out, "bench", cfg.to_dict(),
                    {s.mode.value: s.to_csv_row()[1:] for s in summaries}, [path])
    for s in summaries:
        print(f"{s.mode.value:>9}: avg {s.average:.1f} us, median {s.median:.1f} us, "
              f"min {s.minimum:.1f} us, max {s.maximum:.1f} us")
    inference, online = summaries
    passed = _check("timing ordering", online.average >= inference.average,
                    f"online {online.average:.1f} us >= inference {inference.average:.1f} us")
    return EXIT_OK if passed else EXIT_ACCEPTANCE


def _evaluate(head, stats, F_raw, labels, n_classes):
    predicted = np.argmax(head.predict_batch(stats.standardize_batch(F_raw)), axis=1)
    return ConfusionMatrix.from_predictions(predicted, labels, k=n_classes)


def cmd_classify(cfg):
    """Online multi-class learning on the class-block stream, evaluated on the test corpora."""
    paths = RunPaths(Path(cfg.out_dir))
    model, preproc = _load_frozen(paths)
    X_test, labels = _test_set(paths, preproc)
    F_test = _raw_features(model, X_test)
    n_classes = len(FanMode)

    pipeline = Pipeline.for_classification(model, preproc, alpha=cfg.head_alpha, use_bias=cfg.use_bias)
    stream = FanSimulator(cfg.seed, StreamKey.CLASSIFY).class_blocks(cfg.per_block, cfg.passes, n_classes)
    curve = []
    trace_rows = []

    def steps():
        for window in stream:
            report = pipeline.process_sample(window)
            if pipeline.step % cfg.eval_every == 0:
                f1 = _evaluate(pipeline.head, pipeline.stats, F_test, labels, n_classes)
                per_class = f1.f1_per_class()
                row = [pipeline.step] + [float(per_class[c]) if c < pipeline.head.k else None
                                         for c in range(n_classes)]
                curve.append(row + [f1.macro_f1(classes=n_classes)])
                logging.info(f"Step {pipeline.step}: k={pipeline.head.k}, macro-F1 {curve[-1][-1]:.3f}")
            yield report.to_csv_row()

    artifacts = [write_csv(paths.artifact("classify_trace.csv"), StepReport.CSV_HEADER, steps())]
    header = ["step"] + [f"f1_class{c}" for c in range(n_classes)] + ["macro_f1"]
    artifacts.append(write_csv(paths.artifact("f1_curve.csv"), header, curve))
    artifacts.append(write_csv(paths.artifact("online_confusion.csv"), ("truth", "predicted", "count"),
                               pipeline.metrics.rows()))
    artifacts.append(write_head_file(paths.artifact("classifier_head.tolh"), pipeline.head))
    if not curve:
        raise DomainError(f"stream of {pipeline.step} steps is shorter than --eval-every {cfg.eval_every}")

    first, final = curve[0][-1], curve[-1][-1]
    results = {
        "steps": pipeline.step,
        "k": pipeline.head.k,
        "first_eval_step": curve[0][0],
        "first_macro_f1": first,
        "final_macro_f1": final,
        "prequential_macro_f1": pipeline.metrics.macro_f1(),
    }
    update_manifest(paths.out, "classify", cfg.to_dict(), results, artifacts)
    print(f"Online macro-F1 {first:.3f} at step {curve[0][0]} -> {final:.3f} at step {curve[-1][0]} (k={pipeline.head.k})")
    checks = [
        _check("online macro-F1", final >= ONLINE_F1_MIN, f"{final:.3f} >= {ONLINE_F1_MIN}"),
        _check("learning curve", final >= first, f"final {final:.3f} >= first {first:.3f}"),
    ]
    return EXIT_OK if all(checks) else EXIT_ACCEPTANCE


def _stratified_prefix(labels, n_windows, n_classes):
    """Indices of the first n_windows / n_classes windows of each class, in stream order."""
    per_class = max(1, n_windows // n_classes)
    picked = [np.flatnonzero(labels == c)[:per_class] for c in range(n_classes)]
    return np.sort(np.concatenate(picked))


def cmd_baseline(cfg):
    """Offline softmax baselines over epochs and dataset sizes."""
    paths = RunPaths(Path(cfg.out_dir))
    model, preproc = _load_frozen(paths)
    n_classes = len(FanMode)
    stream = list(FanSimulator(cfg.seed, StreamKey.CLASSIFY).class_blocks(cfg.per_block, cfg.passes, n_classes))
    train_labels = np.array([w.mode for w in stream], dtype=np.int64)
    F_train = _raw_features(model, preproc.apply_batch(stream))
    del stream
    stats = RunningStats.from_array(F_train)
    F_train = stats.standardize_batch(F_train)
    X_test, test_labels = _test_set(paths, preproc)
    F_test = _raw_features(model, X_test)

    def macro(head):
        return _evaluate(head, stats, F_test, test_labels, n_classes).macro_f1(classes=n_classes)

    epoch_rows = []
    for epochs in cfg.baseline_epochs:
        result = train_softmax_offline(Dataset(F_train, train_labels), cfg.train_config(epochs))
        epoch_rows.append((epochs, macro(result.model)))
        logging.info(f"Offline baseline, {epochs} epochs: macro-F1 {epoch_rows[-1][1]:.3f}")
    size_rows = []
    for size in cfg.baseline_sizes:
        idx = _stratified_prefix(train_labels, size, n_classes)
        batch = min(cfg.offline_batch, len(idx))
        result = train_softmax_offline(Dataset(F_train[idx], train_labels[idx]),
                                       cfg.train_config(cfg.baseline_size_epochs, batch))
        size_rows.append((len(idx), macro(result.model)))
        logging.info(f"Offline baseline, {len(idx)} windows: macro-F1 {size_rows[-1][1]:.3f}")

    artifacts = [
        write_csv(paths.artifact("baseline_epochs.csv"), ("epochs", "macro_f1"), epoch_rows),
        write_csv(paths.artifact("baseline_sizes.csv"), ("n_windows", "macro_f1"), size_rows),
    ]
    online = read_manifest(paths.out).get("commands", {}).get("classify", {}).get("results", {}).get("final_macro_f1")
    results = {"epochs": dict(epoch_rows), "sizes": dict(size_rows), "online_final_macro_f1": online}
    update_manifest(paths.out, "baseline", cfg.to_dict(), results, artifacts)
    for epochs, value in epoch_rows:
        print(f"{epochs:>4} epochs: macro-F1 {value:.3f}")
    if online is None:
        logging.warning("No online result in the manifest; run `classify` first to compare")
        return EXIT_OK
    long_runs = [value for epochs, value in epoch_rows if epochs >= 50]
    passed = _check("offline >= online", all(v >= online for v in long_runs),
                    f"offline {long_runs} vs online {online:.3f}")
    return EXIT_OK if passed else EXIT_ACCEPTANCE


def cmd_gradcheck(cfg):
    """Finite-difference checks of every analytic gradient."""
    paths = RunPaths(Path(cfg.out_dir))
    rng = Rng(cfg.seed)
    results = [
        ("bce", grad_check(GradRule.BCE, rng.child(1))),
        ("mse-sigmoid", grad_check(GradRule.MSE_SIGMOID, rng.child(2))),
        ("softmax", grad_check("softmax", rng.child(3))),
        ("backprop", backprop_grad_check(rng.child(4))),
    ]
    rows = [(name, error, error < GRADCHECK_TOLERANCE) for name, error in results]
    path = write_csv(paths.artifact("gradcheck.csv"), ("check", "max_relative_error", "passed"), rows)
    update_manifest(paths.out, "gradcheck", cfg.to_dict(), {name: error for name, error, _ in rows}, [path])
    for name, error, ok in rows:
        print(f"{name:>12}: max relative error {error:.3e} {'ok' if ok else 'FAILED'}")
    passed = all(ok for _, _, ok in rows)
    _check("gradients", passed, f"tolerance {GRADCHECK_TOLERANCE}")
    return EXIT_OK if passed else EXIT_ACCEPTANCE


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "finetune": cmd_finetune,
    "classify": cmd_classify,
    "baseline": cmd_baseline,
    "bench": cmd_bench,
    "gradcheck": cmd_gradcheck,
}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, help="Random seed (default from config.json)")
    common.add_argument("--out", dest="out_dir", help="Output directory")
    common.add_argument("--alpha", dest="head_alpha", type=float, help="Online head learning rate")
    common.add_argument("--grad-rule", choices=GRAD_RULE_NAMES, help="Regression head update rule")
    common.add_argument("--iterations", type=int, help="Fine-tune iterations")
    common.add_argument("--eval-every", type=int, help="Evaluation interval of the online classifier")
    common.add_argument("--drift", help='Drift as "rx,ry,rz,gain,ox,oy,oz"')
    common.add_argument("--config", default="config.json", help="Config file (relative to the project)")

    parser = argparse.ArgumentParser(prog="StreamHead",
                                     description="Online learning on top of a frozen autoencoder")
    subparsers = parser.add_subparsers(dest="command", required=True)
    for item in COMMAND_HELP:
        subparsers.add_parser(item.title, parents=[common], help=item.summary, description=item.description)
    return parser


def main(argv=None):
    """
    Parse arguments and run one subcommand.

    Returns:
        Process exit code (0 ok, 1 usage, 2 data/format, 3 acceptance check failed)
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE

    manager = ConfigManager(args.config)
    try:
        cfg = manager.apply_overrides(seed=args.seed, out_dir=args.out_dir, head_alpha=args.head_alpha,
                                      grad_rule=args.grad_rule, iterations=args.iterations,
                                      eval_every=args.eval_every, drift=args.drift)
    except DomainError as e:
        logging.error(f"Invalid argument: {e}")
        return EXIT_USAGE

    logging.info(f"Running {args.command}: {find_help(args.command).summary} (seed {cfg.seed}, out {cfg.out_dir})")
    try:
        code = COMMANDS[args.command](cfg)
    except MissingInputError as e:
        logging.error(f"{args.command}: {e}")
        return EXIT_USAGE
    except (StreamHeadError, OSError) as e:
        logging.error(f"{args.command} failed: {e}")
        return EXIT_DATA
    logging.info(f"{args.command} finished with exit code {code}")
    return code
