"""
Configuration Management Module

This module provides centralized configuration management for hs2s-motion.
It combines environment values from .env files with structured configuration
from config.yaml, and builds the RunConfig that drives every pipeline command.

Features:
- Loads environment values from .env files (HS2S_DATA_DIR, ...)
- Loads structured configuration from config.yaml
- Dot-notation access with default values
- RunConfig: one flat record holding every architecture, training and
  pipeline setting, with documented defaults and unknown-key rejection
- Caches configuration lookups

Dependencies:
- PyYAML: For parsing YAML configuration and run files
- python-dotenv: For loading environment variables from .env files

Usage:
    from tools.config import get_config, RunConfig

    config = get_config()
    lr0 = config.get('run.lr0', default=8e-4)

    run = RunConfig.from_sources(config, run_file="runs/t60.yaml",
                                 overrides={"seed": 7})
"""

import os
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, get_args, get_origin, get_type_hints

import yaml
from dotenv import find_dotenv, load_dotenv

from tools.errors import ConfigError

REPO_ROOT = Path(__file__).resolve().parent.parent

_TRUE_WORDS = ("true", "yes", "on", "1")
_FALSE_WORDS = ("false", "no", "off", "0")


class Config:
    """
    Centralized configuration manager.

    Combines environment values from .env files with structured configuration
    from config.yaml, providing a unified interface for accessing settings.
    """

    def __init__(self, config_file: str = "config.yaml"):
        """
        Initialize the configuration manager.

        Args:
            config_file: Path to the YAML configuration file (default: "config.yaml").
                Relative paths are tried against the working directory first and
                the repository root second.

        Raises:
            FileNotFoundError: If the configuration file is not found
            yaml.YAMLError: If the configuration file is malformed
        """
        load_dotenv(find_dotenv(usecwd=True), override=False)

        self.config_file = self._resolve(config_file)
        self._yaml_config = self._load_yaml_config()
        self._cache: Dict[str, Any] = {}

    @staticmethod
    def _resolve(config_file: str) -> Path:
        path = Path(config_file)
        if path.is_absolute() or path.exists():
            return path
        return REPO_ROOT / path

    def _load_yaml_config(self) -> Dict[str, Any]:
        """
        Load and parse the YAML configuration file.

        Returns:
            Dictionary containing the parsed YAML configuration
        """
        try:
            with open(self.config_file, "r", encoding="utf-8") as file:
                return yaml.safe_load(file) or {}
        except FileNotFoundError:
            raise FileNotFoundError(f"Configuration file '{self.config_file}' not found")
        except yaml.YAMLError as e:
            raise yaml.YAMLError(f"Error parsing configuration file '{self.config_file}': {e}")

    def get_env(self, key: str, default: Optional[str] = None) -> Optional[str]:
        """
        Get a value from the environment (after .env loading).

        Args:
            key: Environment variable name
            default: Default value if the variable is not set
        """
        return os.getenv(key, default)

    def get(self, key: str, default: Any = None) -> Any:
        """
        Get a configuration value using dot notation.

        Examples:
            config.get('application.name')
            config.get('run.lr0', 8e-4)
            config.get('evaluation.horizons_ms')
        """
        if key in self._cache:
            return self._cache[key]

        value = self._yaml_config
        try:
            for k in key.split("."):
                value = value[k]
        except (KeyError, TypeError):
            return default

        self._cache[key] = value
        return value

    def get_section(self, section: str) -> Dict[str, Any]:
        """
        Get the complete configuration mapping of one section.

        Examples:
            evaluation = config.get_section('evaluation')
            horizons = evaluation.get('horizons_ms', [80, 160, 320, 400])
        """
        return self.get(section, {}) or {}

    def reload(self):
        """Reload configuration from files and clear the lookup cache."""
        load_dotenv(find_dotenv(usecwd=True), override=True)
        self._yaml_config = self._load_yaml_config()
        self._cache.clear()


# Global configuration instance for easy access
_config_instance = None


def get_config() -> Config:
    """
    Get the global configuration instance.

    Returns:
        The global Config instance
    """
    global _config_instance
    if _config_instance is None:
        _config_instance = Config()
    return _config_instance


def _coerce_scalar(key: str, value: Any, kind: type) -> Any:
    # YAML 1.1 reads `8e-4` and quoted numbers as strings
    try:
        if kind is bool:
            if isinstance(value, bool):
                return value
            word = str(value).strip().lower()
            if word in _TRUE_WORDS:
                return True
            if word in _FALSE_WORDS:
                return False
            raise ValueError(word)
        if kind is int:
            if isinstance(value, bool):
                raise ValueError(value)
            if isinstance(value, float):
                if not value.is_integer():
                    raise ValueError(value)
                return int(value)
            return int(str(value).strip()) if isinstance(value, str) else int(value)
        if kind is float:
            if isinstance(value, bool):
                raise ValueError(value)
            return float(value)
        if kind is str:
            if isinstance(value, (list, dict)):
                raise ValueError(value)
            return str(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{key} must be {kind.__name__}, got {value!r}")
    return value


def _coerce(key: str, value: Any, hint: Any) -> Any:
    if get_origin(hint) in (list, List):
        (item,) = get_args(hint)
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{key} must be a list of {item.__name__}, got {value!r}")
        return [_coerce_scalar(key, v, item) for v in value]
    return _coerce_scalar(key, value, hint)


@dataclass(frozen=True)
class RunConfig:
    """
    Every setting of one pipeline run.

    Architecture (T, tau, latent_dim, sub_hidden, dec_hidden, activation,
    variant, seq2seq_*), training (lr0 ... folds), data, completion and
    evaluation settings. docs/configuration.md documents each field.
    """

    # architecture
    T: int = 60
    tau: int = 10
    latent_dim: int = 1500
    sub_hidden: int = 1500
    dec_hidden: int = 1500
    activation: str = "linear"
    variant: str = "hs2sae"
    seq2seq_j: int = 5
    seq2seq_target: str = "full"

    # training
    lr0: float = 8e-4
    decay: float = 4e-3
    batch: int = 64
    epochs: int = 300
    samples_per_epoch: int = 10000
    folds: int = 5
    seed: int = 0
    label_masking: bool = False

    # data
    data_source: str = "h36m"
    data_dir: str = ""
    output_dir: str = "./runs/default"
    scheme: str = "zscore"
    ignore_threshold: float = 1e-4
    downsample: int = 2
    use_labels: bool = True
    actions: List[str] = field(default_factory=list)
    train_subjects: List[int] = field(default_factory=lambda: [1, 6, 7, 8, 9, 11])
    test_subjects: List[int] = field(default_factory=lambda: [5])
    synthetic_channels: int = 8
    synthetic_length: int = 240
    synthetic_train_per_family: int = 16
    synthetic_test_per_family: int = 4

    # completion
    vj_samples: int = 1000
    fn_epochs: int = 50
    fn_drop_rate: float = 0.5
    fn_drop_every: int = 10
    noise_scale: float = 1.0

    # evaluation
    input_frames: int = 50
    output_frames: int = 10
    clips_per_action: int = 8
    clip_seed: int = 1234567890
    clip_list: str = ""
    euler_convention: str = "xyz"
    min_gt_std: float = 0.0

    @classmethod
    def field_names(cls) -> List[str]:
        return [f.name for f in fields(cls)]

    @classmethod
    def from_mapping(cls, mapping: Dict[str, Any], base: Optional["RunConfig"] = None) -> "RunConfig":
        """
        Build a RunConfig from a flat mapping layered over `base`.

        Values are converted to the field's declared type, so `lr0: 8e-4`
        (a string under YAML 1.1) becomes a float.

        Raises:
            ConfigError: If the mapping contains unknown keys or a value
                that does not convert to its field's type
        """
        base = base or cls()
        unknown = sorted(set(mapping) - set(cls.field_names()))
        if unknown:
            raise ConfigError(f"Unknown configuration keys: {', '.join(unknown)}")
        hints = get_type_hints(cls)
        return replace(base, **{k: _coerce(k, v, hints[k]) for k, v in mapping.items() if v is not None})

    @classmethod
    def from_file(cls, path: str, base: Optional["RunConfig"] = None) -> "RunConfig":
        """Load a flat YAML run file (`key: value` lines, # comments)."""
        try:
            with open(path, "r", encoding="utf-8") as file:
                mapping = yaml.safe_load(file) or {}
        except FileNotFoundError:
            raise ConfigError(f"Run file '{path}' not found")
        except yaml.YAMLError as e:
            raise ConfigError(f"Error parsing run file '{path}': {e}")
        if not isinstance(mapping, dict):
            raise ConfigError(f"Run file '{path}' must be a flat key: value mapping")
        return cls.from_mapping(mapping, base)

    @classmethod
    def from_sources(cls, config: Optional[Config] = None, run_file: Optional[str] = None,
                     overrides: Optional[Dict[str, Any]] = None) -> "RunConfig":
        """
        Layer defaults, the config.yaml `run:` section, a run file and overrides.

        An empty data_dir falls back to the HS2S_DATA_DIR environment variable.
        """
        config = config or get_config()
        run = cls.from_mapping(config.get_section("run"))
        if run_file:
            run = cls.from_file(run_file, run)
        if overrides:
            run = cls.from_mapping(overrides, run)
        if not run.data_dir:
            run = replace(run, data_dir=config.get_env("HS2S_DATA_DIR", "") or "")
        run.validate()
        return run

    def validate(self):
        """
        Check cross-field constraints.

        Raises:
            ConfigError: On any inconsistent setting
        """
        if self.T <= 0 or self.tau <= 0 or self.T % self.tau != 0:
            raise ConfigError(f"tau={self.tau} must divide T={self.T}")
        for name in ("latent_dim", "sub_hidden", "dec_hidden", "batch", "samples_per_epoch", "folds"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.lr0 <= 0 or self.decay < 0:
            raise ConfigError("lr0 must be positive and decay non-negative")
        if self.epochs < 0:
            raise ConfigError("epochs must be non-negative")
        if self.activation not in ("tanh", "linear"):
            raise ConfigError(f"Unknown activation '{self.activation}'")
        if self.variant not in ("hs2sae", "basic_pad", "h_seq2seq"):
            raise ConfigError(f"Unknown variant '{self.variant}'")
        if self.seq2seq_target not in ("suffix", "full"):
            raise ConfigError(f"Unknown seq2seq_target '{self.seq2seq_target}'")
        if self.scheme not in ("zscore", "unit_range"):
            raise ConfigError(f"Unknown normalization scheme '{self.scheme}'")
        if self.data_source not in ("h36m", "synthetic"):
            raise ConfigError(f"Unknown data_source '{self.data_source}'")
        if self.euler_convention not in ("zyx", "xyz"):
            raise ConfigError(f"Unknown euler_convention '{self.euler_convention}'")

    def as_dict(self) -> Dict[str, Any]:
        return asdict(self)
