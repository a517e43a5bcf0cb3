"""Configuration management for the gait severity pipeline."""

import copy
import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Tuple

from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .constants import (
    BLOCK_DROPOUT,
    DEFAULT_FPS,
    DEFAULT_MIN_CONF,
    DEFAULT_MIN_EVENT_PROMINENCE,
    DEFAULT_MIN_FRAC,
    DEFAULT_NOISE_SIGMA_PX,
    DEFAULT_SMOOTH_CUTOFF_HZ,
    DEFAULT_STRIDE,
    DEFAULT_WINDOW,
    ENCODER_DROPOUT,
    ENCODER_HIDDEN,
    ERR_INVALID_CONFIG,
    HEAD_DROPOUT,
    NUM_CLASSES,
    REFRACTORY_FRACTION,
    RESOLVED_CONFIG_FILE,
    SMOOTHING_WINDOW,
    STANCE_VELOCITY_FRACTION,
    FeatureSet,
    FusionMode,
    ModelStream,
    Preset,
)
from .exceptions import ConfigurationError
from .models.pose import SyntheticSpec

load_dotenv()


@dataclass
class EnvSettings:
    """Settings read from the environment."""
    log_level: str = os.getenv("GAIT_FUSION_LOG_LEVEL", "INFO").upper()


env_settings = EnvSettings()


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", use_enum_values=False)


class DataConfig(_Section):
    """Windowing, quality filtering and split settings."""
    window: int = Field(DEFAULT_WINDOW, ge=1)
    stride: int = Field(DEFAULT_STRIDE, ge=1)
    min_conf: float = Field(DEFAULT_MIN_CONF, ge=0.0, le=1.0)
    min_frac: float = Field(DEFAULT_MIN_FRAC, ge=0.0, le=1.0)
    default_fps: float = Field(DEFAULT_FPS, gt=0.0)
    normalize: bool = True
    split_fractions: Tuple[float, float, float] = (0.6, 0.2, 0.2)

    @model_validator(mode="after")
    def _check_fractions(self) -> "DataConfig":
        if any(f <= 0 for f in self.split_fractions):
            raise ValueError("split fractions must be positive")
        if abs(sum(self.split_fractions) - 1.0) > 1e-9:
            raise ValueError("split fractions must sum to 1")
        return self


class FeatureConfig(_Section):
    """Clinical feature extraction settings."""
    feature_set: FeatureSet = FeatureSet.SELECTED14
    smooth_cutoff_hz: float = Field(DEFAULT_SMOOTH_CUTOFF_HZ, ge=0.0)
    smoothing_window: int = Field(SMOOTHING_WINDOW, ge=1)
    refractory_fraction: float = Field(REFRACTORY_FRACTION, ge=0.0)
    stance_velocity_fraction: float = Field(STANCE_VELOCITY_FRACTION, gt=0.0, lt=1.0)
    min_event_prominence: float = Field(DEFAULT_MIN_EVENT_PROMINENCE, ge=0.0)


class ModelConfig(_Section):
    """Backbone, encoder, fusion and head settings."""
    preset: Preset = Preset.DESK
    fusion: FusionMode = FusionMode.CONCAT
    stream: ModelStream = ModelStream.FUSED
    num_classes: int = Field(NUM_CLASSES, ge=2)
    block_dropout: float = Field(BLOCK_DROPOUT, ge=0.0, lt=1.0)
    encoder_hidden: int = Field(ENCODER_HIDDEN, ge=1)
    encoder_dropout: float = Field(ENCODER_DROPOUT, ge=0.0, lt=1.0)
    head_dropout: float = Field(HEAD_DROPOUT, ge=0.0, lt=1.0)
    head_relu: bool = False


class TrainConfig(_Section):
    """Two-phase optimisation schedule."""
    phase1_epochs: int = Field(3, ge=0)
    total_epochs: int = Field(20, ge=1)
    phase1_lr: float = Field(1e-3, gt=0.0)
    phase2_lr: float = Field(1e-4, gt=0.0)
    eta_min: float = Field(1e-6, ge=0.0)
    weight_decay: float = Field(5e-5, ge=0.0)
    decoupled_weight_decay: bool = False
    batch_size: int = Field(32, ge=1)
    patience: int = Field(5, ge=1)
    unfreeze_blocks: List[int] = Field(default_factory=lambda: [9, 10])
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    flip_prob: float = Field(0.5, ge=0.0, le=1.0)
    noise_sigma_px: float = Field(DEFAULT_NOISE_SIGMA_PX, ge=0.0)
    class_weighted_loss: bool = False

    @model_validator(mode="after")
    def _check_schedule(self) -> "TrainConfig":
        if self.phase1_epochs >= self.total_epochs:
            raise ValueError("phase1_epochs must be smaller than total_epochs")
        return self


class AttributionConfig(_Section):
    """Grad-CAM and occlusion settings."""
    target: Literal["predicted", "true"] = "predicted"
    temporal_agg: Literal["mean", "max"] = "mean"
    mode: Literal["clip", "mean"] = "clip"
    max_clips: Optional[int] = Field(None, ge=1)


class RunConfig(_Section):
    """Fully resolved configuration of one run."""
    seed: int = Field(0, ge=0)
    data: DataConfig = Field(default_factory=DataConfig)
    features: FeatureConfig = Field(default_factory=FeatureConfig)
    model: ModelConfig = Field(default_factory=ModelConfig)
    training: TrainConfig = Field(default_factory=TrainConfig)
    attribution: AttributionConfig = Field(default_factory=AttributionConfig)
    synth: SyntheticSpec = Field(default_factory=SyntheticSpec)


def _apply_override(data: Dict[str, Any], dotted_key: str, value: Any) -> None:
    node = data
    parts = dotted_key.split(".")
    for part in parts[:-1]:
        node = node.setdefault(part, {})
        if not isinstance(node, dict):
            raise ConfigurationError(ERR_INVALID_CONFIG.format(f"{dotted_key} is not a section"))
    node[parts[-1]] = value


def load_run_config(path: Optional[str] = None, overrides: Optional[Dict[str, Any]] = None,
                    base: Optional[Dict[str, Any]] = None) -> RunConfig:
    """Load a RunConfig from JSON (or start from ``base``) and apply dotted-key overrides.

    None-valued overrides are skipped.
    """
    data: Dict[str, Any] = copy.deepcopy(base) if base else {}
    if path:
        config_path = Path(path)
        if not config_path.exists():
            raise ConfigurationError(ERR_INVALID_CONFIG.format(f"config file {path} not found"))
        try:
            data = json.loads(config_path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise ConfigurationError(ERR_INVALID_CONFIG.format(e)) from e
        if not isinstance(data, dict):
            raise ConfigurationError(ERR_INVALID_CONFIG.format("config file must hold a JSON object"))
    for key, value in (overrides or {}).items():
        if value is not None:
            _apply_override(data, key, value)
    try:
        return RunConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigurationError(ERR_INVALID_CONFIG.format(e)) from e


def write_resolved_config(run_config: RunConfig, out_dir: str) -> Path:
    """Write the resolved config next to a run's outputs."""
    out_path = Path(out_dir)
    out_path.mkdir(parents=True, exist_ok=True)
    target = out_path / RESOLVED_CONFIG_FILE
    target.write_text(
        json.dumps(run_config.model_dump(mode="json"), indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )
    return target
