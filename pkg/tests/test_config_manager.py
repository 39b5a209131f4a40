"""Tests for experiment configuration loading, saving and overrides."""
import json

import pytest

from engine.config_manager import ConfigManager, ExperimentConfig, get_base_path
from engine.errors import DomainError
from engine.offline_trainer import LossKind
from engine.online_head import GradRule
from utils.fan_simulator import DriftConfig


class TestExperimentConfig:

    def test_defaults(self):
        cfg = ExperimentConfig()
        assert cfg.seed == 0
        assert cfg.iterations == 2000 and cfg.eval_every == 50
        assert cfg.grad_rule_enum == GradRule.BCE
        assert cfg.drift_config == DriftConfig.default()
        assert cfg.baseline_epochs == [1, 5, 10, 50, 100, 200]

    def test_repository_config_matches_defaults(self):
        with open(get_base_path() / "config.json") as f:
            assert json.load(f) == ExperimentConfig().to_dict()

    def test_train_config(self):
        train = ExperimentConfig(seed=7, offline_loss="bce").train_config(epochs=3)
        assert (train.epochs, train.batch_size, train.seed, train.loss) == (3, 32, 7, LossKind.BCE)

    @pytest.mark.parametrize("key,value", [
        ("iterations", 0), ("iterations", True), ("head_alpha", -1.0), ("grad_rule", "hinge"),
        ("drift", "1,2"), ("baseline_epochs", []), ("seed", -1), ("unknown", 1),
    ])
    def test_invalid_values(self, key, value):
        assert not ExperimentConfig.is_valid(key, value)

    @pytest.mark.parametrize("rule", ["paper-literal", "double-sigmoid"])
    def test_literal_rule_names(self, rule):
        assert ExperimentConfig.is_valid("grad_rule", rule)
        assert ExperimentConfig(grad_rule=rule).grad_rule_enum == GradRule.DOUBLE_SIGMOID

    def test_zero_alpha_is_valid(self):
        assert ExperimentConfig.is_valid("head_alpha", 0.0)


class TestConfigManager:

    def test_missing_file_uses_defaults(self, tmp_path):
        manager = ConfigManager(tmp_path / "absent.json")
        assert manager.config == ExperimentConfig()

    def test_invalid_entries_fall_back(self, tmp_path):
        path = tmp_path / "config.json"
        path.write_text(json.dumps({"seed": 9, "iterations": "many", "colour": "blue"}))
        cfg = ConfigManager(path).config
        assert cfg.seed == 9
        assert cfg.iterations == ExperimentConfig().iterations

    def test_unreadable_file_uses_defaults(self, tmp_path):
        path = tmp_path / "config.json"
        path.write_text("[1, 2")
        assert ConfigManager(path).config == ExperimentConfig()

    def test_save_and_reload(self, tmp_path):
        path = tmp_path / "config.json"
        manager = ConfigManager(path)
        manager.config = manager.apply_overrides(seed=5, grad_rule="mse-sigmoid")
        manager.save_preferences()
        reloaded = ConfigManager(path).config
        assert (reloaded.seed, reloaded.grad_rule) == (5, "mse-sigmoid")

    def test_overrides_skip_none(self, tmp_path):
        manager = ConfigManager(tmp_path / "absent.json")
        cfg = manager.apply_overrides(seed=None, iterations=10)
        assert cfg.seed == 0 and cfg.iterations == 10
        assert manager.config.iterations == 2000

    def test_invalid_override(self, tmp_path):
        with pytest.raises(DomainError):
            ConfigManager(tmp_path / "absent.json").apply_overrides(drift="not a drift")
