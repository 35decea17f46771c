"""
Configuration module for the GRID label-noise-robust learning project.

This module contains the default settings, numeric constants, the
experiment configuration record and the logging setup.
"""

import logging
import math
import os
from dataclasses import asdict, dataclass, field, fields
from typing import Any, Dict, List, Optional, Tuple

import yaml

from src.utils.exceptions import ConfigError
from src.utils.file_utils import atomic_write

# File format versions
CONFIG_SCHEMA_VERSION = 1
METRICS_SCHEMA_VERSION = 1
CHECKPOINT_FORMAT_VERSION = 1
DATASET_FORMAT_VERSION = 1

# Numeric constants
PROB_CLAMP = 1e-7
CHI2_EPS = 1e-10
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPSILON = 1e-8

# Experiment choices
SCENARIOS = ("scene", "pixel")
MODES = ("hybrid", "disc_only", "gen_only", "standard_joint")
OPTIMIZERS = ("adam", "sgd")
SELECTORS = ("grid", "top_k_loss", "random")
SWEEP_AXES = ("lambda", "slnir", "mode")
LAMBDA_PERCENTS = tuple(range(0, 100, 10))
SLNIR_VALUES = (0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6)
DEFAULT_LAMBDA_PERCENT = {"scene": 20, "pixel": 10}

# Train / validation / test split presets
SPLIT_PRESETS: Dict[str, Tuple[float, float, float]] = {
    "standard": (0.70, 0.10, 0.20),
    "large": (0.52, 0.24, 0.24),
}

# Logging configuration
LOG_LEVEL = "INFO"
LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"


def configure_logging(level: str = LOG_LEVEL) -> None:
    """
    Configure the root logger once for command-line use.

    Args:
        level: Logging level name (e.g. "INFO", "DEBUG").
    """
    logging.basicConfig(level=getattr(logging, level.upper(), logging.INFO), format=LOG_FORMAT)


@dataclass
class ExperimentConfig:
    """
    Settings for one training run.

    Attributes:
        scenario: "scene" (multi-label vectors) or "pixel" (label grids).
        mode: Update strategy, one of MODES.
        lambda_percent: Share k of each mini-batch routed to generative
            reasoning; None selects the scenario default.
        slnir: Synthetic label noise injection ratio.
        epochs: Number of passes over the training split.
        batch_size: Mini-batch size.
        learning_rate: Optimizer step size.
        optimizer: "adam" or "sgd".
        latent_dim: VAE latent size J.
        descriptor_dim: Backbone output width.
        backbone_hidden: Hidden widths of the backbone.
        vae_hidden: Hidden width of the VAE encoder.
        n_samples: Number of generated samples before splitting.
        n_classes: Number of classes C.
        feature_dim: Scene feature length, or per-pixel channels for "pixel".
        image_size: Height and width of pixel-scenario images.
        split_preset: Key into SPLIT_PRESETS.
        ndcg_k: Retrieval depth for NDCG.
        n_queries: Training-split queries used for the final test NDCG.
        seed: Master seed.
        output_dir: Directory receiving metrics and checkpoints.
        checkpoint_every_epoch: Also write a checkpoint after each epoch.
    """

    scenario: str = "scene"
    mode: str = "hybrid"
    lambda_percent: Optional[int] = None
    slnir: float = 0.3
    epochs: int = 100
    batch_size: int = 128
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    latent_dim: int = 128
    descriptor_dim: int = 64
    backbone_hidden: List[int] = field(default_factory=lambda: [128])
    vae_hidden: int = 128
    n_samples: int = 2000
    n_classes: int = 8
    feature_dim: int = 32
    image_size: int = 8
    split_preset: str = "standard"
    ndcg_k: int = 20
    n_queries: int = 100
    seed: int = 0
    output_dir: str = os.path.join("runs", "latest")
    checkpoint_every_epoch: bool = False

    @property
    def resolved_lambda_percent(self) -> int:
        """The configured λ percentage, or the scenario default when unset."""
        if self.lambda_percent is None:
            return DEFAULT_LAMBDA_PERCENT.get(self.scenario, 20)
        return self.lambda_percent

    @property
    def split_ratios(self) -> Tuple[float, float, float]:
        """Train / validation / test fractions for the configured preset."""
        return SPLIT_PRESETS[self.split_preset]

    def validate(self) -> List[str]:
        """
        Check every field against its documented range.

        Returns:
            Field-level error messages; empty when the config is valid.
        """
        errors: List[str] = []

        def positive_int(name: str) -> None:
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, int) or value < 1:
                errors.append(f"{name}: must be a positive integer, got {value!r}")

        if self.scenario not in SCENARIOS:
            errors.append(f"scenario: must be one of {SCENARIOS}, got {self.scenario!r}")
        if self.mode not in MODES:
            errors.append(f"mode: must be one of {MODES}, got {self.mode!r}")
        if self.optimizer not in OPTIMIZERS:
            errors.append(f"optimizer: must be one of {OPTIMIZERS}, got {self.optimizer!r}")
        if self.lambda_percent is not None and self.lambda_percent not in LAMBDA_PERCENTS:
            errors.append(f"lambda_percent: must be one of {LAMBDA_PERCENTS}, got {self.lambda_percent!r}")
        if not isinstance(self.slnir, (int, float)) or not any(
            math.isclose(self.slnir, v, abs_tol=1e-9) for v in SLNIR_VALUES
        ):
            errors.append(f"slnir: must be one of {SLNIR_VALUES}, got {self.slnir!r}")
        for name in ("epochs", "batch_size", "latent_dim", "descriptor_dim", "vae_hidden",
                     "n_samples", "feature_dim", "image_size", "ndcg_k", "n_queries"):
            positive_int(name)
        if isinstance(self.n_classes, bool) or not isinstance(self.n_classes, int) or self.n_classes < 2:
            errors.append(f"n_classes: must be an integer >= 2, got {self.n_classes!r}")
        if not isinstance(self.learning_rate, (int, float)) or not self.learning_rate > 0:
            errors.append(f"learning_rate: must be > 0, got {self.learning_rate!r}")
        if not isinstance(self.backbone_hidden, list) or not all(
            isinstance(w, int) and not isinstance(w, bool) and w > 0 for w in self.backbone_hidden
        ):
            errors.append(f"backbone_hidden: must be a list of positive integers, got {self.backbone_hidden!r}")
        if self.split_preset not in SPLIT_PRESETS:
            errors.append(f"split_preset: must be one of {tuple(SPLIT_PRESETS)}, got {self.split_preset!r}")
        if isinstance(self.seed, bool) or not isinstance(self.seed, int) or self.seed < 0:
            errors.append(f"seed: must be a non-negative integer, got {self.seed!r}")
        if not self.output_dir:
            errors.append("output_dir: must not be empty")
        return errors

    def ensure_valid(self) -> "ExperimentConfig":
        """
        Raise if the config is invalid.

        Raises:
            ConfigError: With one message per offending field.
        """
        errors = self.validate()
        if errors:
            raise ConfigError("Invalid experiment configuration", errors)
        return self

    def to_dict(self) -> Dict[str, Any]:
        """Plain-dict form, including the schema version."""
        data = asdict(self)
        data["schema_version"] = CONFIG_SCHEMA_VERSION
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ExperimentConfig":
        """
        Build a config from a plain dict.

        Raises:
            ConfigError: If the schema version or a key is unknown.
        """
        data = dict(data)
        version = data.pop("schema_version", CONFIG_SCHEMA_VERSION)
        if version != CONFIG_SCHEMA_VERSION:
            raise ConfigError(f"Unsupported config schema_version {version}")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError("Unknown configuration fields", [f"{name}: unknown field" for name in unknown])
        return cls(**data)

    def with_overrides(self, overrides: Dict[str, Any]) -> "ExperimentConfig":
        """Return a copy with every non-None override applied."""
        data = asdict(self)
        data.update({k: v for k, v in overrides.items() if v is not None})
        return ExperimentConfig.from_dict(data)

    def to_yaml(self, path: str) -> None:
        """Write the config as YAML, atomically."""
        with atomic_write(path, "w", encoding="utf-8") as f:
            yaml.safe_dump(self.to_dict(), f, sort_keys=True)

    @classmethod
    def from_yaml(cls, path: str) -> "ExperimentConfig":
        """
        Load a config from a YAML file.

        Raises:
            ConfigError: If the file is missing, unreadable or malformed.
        """
        try:
            with open(path, "r", encoding="utf-8") as f:
                data = yaml.safe_load(f) or {}
        except FileNotFoundError as e:
            raise ConfigError(f"Config file not found: {path}") from e
        except yaml.YAMLError as e:
            raise ConfigError(f"Error parsing config file {path}: {str(e)}") from e
        if not isinstance(data, dict):
            raise ConfigError(f"Config file {path} must contain a mapping")
        return cls.from_dict(data)
