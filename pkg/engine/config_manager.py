"""
Configuration manager for experiment defaults.
Loads config.json from the project base path, validates every key on its own
(invalid values fall back to defaults with a warning) and applies CLI overrides.
"""
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from engine.errors import DomainError
from engine.offline_trainer import LossKind, TrainConfig
from engine.online_head import GradRule
from utils.fan_simulator import DriftConfig


def get_base_path():
    """Get the base path for data files, handling both dev and compiled scenarios."""
    if getattr(sys, 'frozen', False) or '__compiled__' in dir():
        return Path(os.path.dirname(sys.executable))
    else:
        return Path(__file__).parent.parent


def _positive_int(value):
    return isinstance(value, int) and not isinstance(value, bool) and value > 0


def _non_negative_number(value):
    return isinstance(value, (int, float)) and not isinstance(value, bool) and value >= 0


def _positive_number(value):
    return _non_negative_number(value) and value > 0


def _enum_value(enum):
    def check(value):
        try:
            enum(value)
            return True
        except ValueError:
            return False
    return check


def _drift_text(value):
    try:
        DriftConfig.parse(value)
        return True
    except DomainError:
        return False


def _int_list(value):
    return isinstance(value, list) and len(value) > 0 and all(_positive_int(v) for v in value)


@dataclass
class ExperimentConfig:
    """Every knob of the experiment commands."""
    seed: int = 0
    out_dir: str = "runs"
    train_windows: int = 3000
    test_windows: int = 3000
    iterations: int = 2000
    eval_every: int = 50
    bench_windows: int = 3000
    head_alpha: float = 0.01
    grad_rule: str = GradRule.BCE.value
    use_bias: bool = True
    random_head_init: bool = False
    offline_alpha: float = 0.05
    offline_batch: int = 32
    offline_epochs: int = 200
    offline_loss: str = LossKind.MSE.value
    drift: str = "5,5,5,1.05,0.02,0,0"
    per_block: int = 600
    passes: int = 2
    baseline_epochs: list = field(default_factory=lambda: [1, 5, 10, 50, 100, 200])
    baseline_sizes: list = field(default_factory=lambda: [150, 300, 600, 1200, 2400, 3600])
    baseline_size_epochs: int = 50
    histogram_bins: int = 50
    anomaly_sigma: float = 3.0

    VALIDATORS = {
        "seed": lambda v: isinstance(v, int) and not isinstance(v, bool) and 0 <= v < 2 ** 64,
        "out_dir": lambda v: isinstance(v, str) and v != "",
        "train_windows": _positive_int,
        "test_windows": _positive_int,
        "iterations": _positive_int,
        "eval_every": _positive_int,
        "bench_windows": _positive_int,
        "head_alpha": _non_negative_number,
        "grad_rule": _enum_value(GradRule),
        "use_bias": lambda v: isinstance(v, bool),
        "random_head_init": lambda v: isinstance(v, bool),
        "offline_alpha": _positive_number,
        "offline_batch": _positive_int,
        "offline_epochs": lambda v: isinstance(v, int) and not isinstance(v, bool) and v >= 0,
        "offline_loss": _enum_value(LossKind),
        "drift": _drift_text,
        "per_block": _positive_int,
        "passes": _positive_int,
        "baseline_epochs": _int_list,
        "baseline_sizes": _int_list,
        "baseline_size_epochs": _positive_int,
        "histogram_bins": _positive_int,
        "anomaly_sigma": _positive_number,
    }

    @classmethod
    def is_valid(cls, key, value):
        check = cls.VALIDATORS.get(key)
        return check is not None and check(value)

    @property
    def drift_config(self):
        return DriftConfig.parse(self.drift)

    @property
    def grad_rule_enum(self):
        return GradRule(self.grad_rule)

    def train_config(self, epochs=None, batch_size=None):
        """TrainConfig for the offline trainer."""
        return TrainConfig(self.offline_epochs if epochs is None else epochs,
                           self.offline_batch if batch_size is None else batch_size,
                           self.offline_alpha, self.seed, LossKind(self.offline_loss))

    def to_dict(self):
        return asdict(self)


class ConfigManager:
    """Manages persisted experiment defaults and per-run overrides."""

    def __init__(self, config_file="config.json"):
        config_path = Path(config_file)
        self.config_file = config_path if config_path.is_absolute() else get_base_path() / config_path
        self.config = ExperimentConfig()

        # Load saved preferences if they exist
        self.load_preferences()

    def load_preferences(self):
        """Load config.json if it exists; bad values keep their defaults."""
        try:
            if not self.config_file.exists():
                logging.info(f"No config file at {self.config_file}, using defaults")
                return self.config
            with open(self.config_file, 'r') as f:
                config_data = json.load(f)
            if not isinstance(config_data, dict):
                raise ValueError("top level must be an object")
        except (OSError, ValueError) as e:
            logging.error(f"Failed to load config {self.config_file}: {e}")
            # Continue with defaults
            return self.config

        known = {f.name for f in fields(ExperimentConfig)}
        values = {}
        for key, value in config_data.items():
            if key not in known:
                logging.warning(f"Unknown config key '{key}' ignored")
            elif ExperimentConfig.is_valid(key, value):
                values[key] = value
            else:
                logging.warning(f"Invalid value {value!r} for '{key}' in config, using default")
        self.config = replace(self.config, **values)
        logging.info(f"Loaded config from {self.config_file}: seed={self.config.seed}, out={self.config.out_dir}")
        return self.config

    def save_preferences(self):
        """Write the current config back to config.json."""
        try:
            with open(self.config_file, 'w') as f:
                json.dump(self.config.to_dict(), f, indent=2)
            logging.info(f"Config saved to {self.config_file}")
        except OSError as e:
            logging.error(f"Failed to save config: {e}")

    def apply_overrides(self, **overrides):
        """
        Return a config with CLI overrides applied (None means "not given").

        Raises:
            DomainError: an override is invalid
        """
        values = {}
        for key, value in overrides.items():
            if value is None:
                continue
            if not ExperimentConfig.is_valid(key, value):
                raise DomainError(f"invalid value {value!r} for {key}")
            values[key] = value
        return replace(self.config, **values)
