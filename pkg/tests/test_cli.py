"""Tests for the command line: argument handling, exit codes and end-to-end runs."""
import csv
import json

import pytest

import engine.online_head as online_head
from ui.cli import EXIT_ACCEPTANCE, EXIT_DATA, EXIT_OK, EXIT_USAGE, COMMANDS, build_parser, main
from ui.command_help import COMMAND_HELP, find_help
from utils.artifacts import MANIFEST_NAME


def read_table(path):
    with open(path, newline="") as f:
        return list(csv.reader(f))


def manifest(out):
    return json.loads((out / MANIFEST_NAME).read_text())


class TestArguments:

    def test_every_command_has_help(self):
        assert [item.title for item in COMMAND_HELP] == list(COMMANDS)
        assert find_help("classify").summary
        assert find_help("nope") is None

    def test_common_flags(self):
        args = build_parser().parse_args(["finetune", "--seed", "4", "--out", "x", "--alpha", "0.2",
                                          "--grad-rule", "mse-sigmoid", "--iterations", "10", "--drift",
                                          "0,0,0,1,0,0,0"])
        assert (args.command, args.seed, args.out_dir, args.head_alpha) == ("finetune", 4, "x", 0.2)
        assert (args.grad_rule, args.iterations, args.drift) == ("mse-sigmoid", 10, "0,0,0,1,0,0,0")

    def test_help_exits_ok(self):
        assert main(["--help"]) == EXIT_OK

    def test_unknown_command(self):
        assert main(["launch"]) == EXIT_USAGE

    @pytest.mark.parametrize("rule", ["paper-literal", "double-sigmoid"])
    def test_literal_grad_rule_accepted(self, rule):
        args = build_parser().parse_args(["finetune", "--grad-rule", rule])
        assert args.grad_rule == rule

    def test_unknown_grad_rule(self, tmp_path):
        assert main(["finetune", "--out", str(tmp_path), "--grad-rule", "hinge"]) == EXIT_USAGE

    def test_bad_drift(self, tmp_path):
        assert main(["finetune", "--out", str(tmp_path), "--drift", "1,2,3"]) == EXIT_USAGE

    def test_non_positive_iterations(self, tmp_path):
        assert main(["finetune", "--out", str(tmp_path), "--iterations", "0"]) == EXIT_USAGE


class TestMissingInputs:

    @pytest.mark.parametrize("command", ["finetune", "classify", "baseline", "bench"])
    def test_model_required(self, tmp_path, command):
        assert main([command, "--out", str(tmp_path)]) == EXIT_USAGE

    def test_corpus_required(self, tmp_path):
        assert main(["train", "--out", str(tmp_path)]) == EXIT_USAGE

    def test_corrupt_model_is_data_error(self, tmp_path):
        (tmp_path / "model.tolm").write_bytes(b"TOLM\x01")
        (tmp_path / "preproc.tolp").write_bytes(b"TOLP\x01")
        assert main(["bench", "--out", str(tmp_path)]) == EXIT_DATA


class TestGradcheck:

    def test_all_gradients_pass(self, tmp_path):
        assert main(["gradcheck", "--out", str(tmp_path)]) == EXIT_OK
        rows = read_table(tmp_path / "gradcheck.csv")
        assert rows[0] == ["check", "max_relative_error", "passed"]
        assert [row[0] for row in rows[1:]] == ["bce", "mse-sigmoid", "softmax", "backprop"]
        assert all(row[2] == "True" for row in rows[1:])
        assert "gradcheck.csv" in manifest(tmp_path)["artifacts"]

    def test_wrong_rule_fails(self, tmp_path, monkeypatch):
        monkeypatch.setattr(online_head, "regression_delta", lambda x_prime, target, rule: 2 * (x_prime - target))
        assert main(["gradcheck", "--out", str(tmp_path)]) == EXIT_ACCEPTANCE


SMALL_RUN = {
    "train_windows": 600,
    "test_windows": 200,
    "iterations": 400,
    "bench_windows": 100,
    "offline_epochs": 40,
    "per_block": 100,
    "passes": 2,
    "baseline_epochs": [1, 50],
    "baseline_sizes": [150, 300],
    "baseline_size_epochs": 10,
}


@pytest.mark.slow
class TestExperiment:

    @pytest.fixture(scope="class")
    def run(self, tmp_path_factory):
        out = tmp_path_factory.mktemp("run")
        config = out / "small.json"
        config.write_text(json.dumps(SMALL_RUN))
        common = ["--out", str(out), "--config", str(config), "--seed", "1"]
        codes = {command: main([command] + common)
                 for command in ("gen-data", "train", "finetune", "classify", "baseline", "bench")}
        return out, codes

    def test_gen_data(self, run):
        out, codes = run
        assert codes["gen-data"] == EXIT_OK
        for name in ("train_normal", "test_normal", "test_stuck", "test_tilted"):
            assert (out / "corpora" / f"{name}.csv").exists()
        assert len(read_table(out / "corpora" / "train_normal.csv")) == 1 + 600 * 40

    def test_gen_data_is_reproducible(self, run, tmp_path):
        out, _ = run
        config = out / "small.json"
        assert main(["gen-data", "--out", str(tmp_path), "--config", str(config), "--seed", "1"]) == EXIT_OK
        for name in ("train_normal", "test_stuck"):
            assert (tmp_path / "corpora" / f"{name}.csv").read_bytes() == \
                (out / "corpora" / f"{name}.csv").read_bytes()

    def test_commands_complete(self, run):
        _, codes = run
        assert codes["gen-data"] == EXIT_OK and codes["bench"] == EXIT_OK
        # the shortened run is not held to the full-size thresholds
        assert all(code in (EXIT_OK, EXIT_ACCEPTANCE) for code in codes.values())

    def test_train_artifacts(self, run):
        out, _ = run
        assert (out / "model.tolm").exists() and (out / "preproc.tolp").exists()
        assert len(read_table(out / "loss_curve.csv")) == 1 + 40
        assert len(read_table(out / "mse_hist_normal.csv")) == 1 + 50 + 1
        results = manifest(out)["commands"]["train"]["results"]
        assert set(results["per_mode_mean_mse"]) == {"normal", "stuck", "tilted"}
        assert 0.0 <= results["false_alarm_rate"] <= 1.0

    def test_finetune_artifacts(self, run):
        out, _ = run
        trace = read_table(out / "finetune_trace.csv")
        assert trace[0] == ["step", "mode", "mse", "loss", "predicted_class", "true_class", "k"]
        assert len(trace) == 1 + 400
        for name in ("mse_hist_pre.csv", "mse_hist_finetune.csv", "mse_hist_post.csv", "timing.csv",
                     "finetuned_head.tolh"):
            assert (out / name).exists()
        results = manifest(out)["commands"]["finetune"]["results"]
        assert results["pre_ratio"] > 0 and results["post_ratio"] > 0
        assert set(results["timing_us"]) == {"inference", "online"}

    def test_classify_artifacts(self, run):
        out, _ = run
        curve = read_table(out / "f1_curve.csv")
        assert curve[0] == ["step", "f1_class0", "f1_class1", "f1_class2", "macro_f1"]
        assert len(curve) == 1 + 600 // 50
        # before class 1 appears only class 0 has a score
        assert curve[1][2] == "" and curve[1][3] == ""
        assert all(0.0 <= float(row[-1]) <= 1.0 for row in curve[1:])
        results = manifest(out)["commands"]["classify"]["results"]
        assert results["k"] == 3 and results["steps"] == 600
        assert (out / "online_confusion.csv").exists()

    def test_baseline_artifacts(self, run):
        out, _ = run
        assert [row[0] for row in read_table(out / "baseline_epochs.csv")[1:]] == ["1", "50"]
        assert [row[0] for row in read_table(out / "baseline_sizes.csv")[1:]] == ["150", "300"]
        results = manifest(out)["commands"]["baseline"]["results"]
        assert results["online_final_macro_f1"] == manifest(out)["commands"]["classify"]["results"]["final_macro_f1"]

    def test_manifest_hashes_every_artifact(self, run):
        out, _ = run
        artifacts = manifest(out)["artifacts"]
        assert manifest(out)["seed"] == 1
        for name in ("corpora/train_normal.csv", "model.tolm", "f1_curve.csv", "timing.csv"):
            assert name in artifacts


def _results(out, command):
    return manifest(out)["commands"][command]["results"]


@pytest.mark.slow
class TestDefaultExperiment:
    """Full-size runs with the shipped configuration must meet every acceptance threshold."""

    @pytest.fixture(scope="class")
    def run(self, tmp_path_factory):
        out = tmp_path_factory.mktemp("default")
        common = ["--out", str(out), "--seed", "0"]
        codes = {command: main([command] + common)
                 for command in ("gen-data", "train", "finetune", "classify", "baseline", "bench")}
        return out, codes

    def test_every_command_passes(self, run):
        _, codes = run
        assert codes == {command: EXIT_OK for command in codes}

    def test_training_loss_halves(self, run):
        out, _ = run
        losses = [float(row[1]) for row in read_table(out / "loss_curve.csv")[1:]]
        assert len(losses) == 200
        assert losses[-1] <= 0.5 * losses[0]

    def test_anomaly_separation(self, run):
        out, _ = run
        assert _results(out, "train")["anomaly_ratio"] >= 2.0

    def test_drift_is_visible_then_recovered(self, run):
        out, _ = run
        results = _results(out, "finetune")
        assert results["pre_ratio"] >= 1.5
        assert results["post_ratio"] <= 1.2

    def test_online_classifier(self, run):
        out, _ = run
        results = _results(out, "classify")
        assert results["final_macro_f1"] >= 0.8
        assert results["final_macro_f1"] >= results["first_macro_f1"]

    def test_offline_baseline_not_worse(self, run):
        out, _ = run
        results = _results(out, "baseline")
        online = results["online_final_macro_f1"]
        assert all(value >= online for epochs, value in results["epochs"].items() if int(epochs) >= 50)

    def test_online_step_costs_more_than_inference(self, run):
        out, _ = run
        timing = _results(out, "bench")
        assert timing["online"][0] >= timing["inference"][0]


@pytest.mark.slow
@pytest.mark.parametrize("seed", [1, 2])
def test_acceptance_across_seeds(tmp_path, seed):
    common = ["--out", str(tmp_path), "--seed", str(seed)]
    for command in ("gen-data", "train", "finetune", "classify"):
        assert main([command] + common) == EXIT_OK, command
    assert _results(tmp_path, "classify")["final_macro_f1"] >= 0.8
    assert _results(tmp_path, "finetune")["post_ratio"] <= 1.2
