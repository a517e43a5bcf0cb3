"""
Gait Fusion
GMFCS severity classification from pose keypoints, fusing an ST-GCN skeleton
stream with clinical gait features.
"""

from .config import RunConfig, env_settings, load_run_config
from .constants import FeatureSet, FusionMode, ModelStream, PoseFormat, Preset
from .exceptions import (
    CheckpointError,
    ConfigurationError,
    ContractError,
    DataValidationError,
    DegenerateSequenceError,
    GaitFusionError,
    PoseParseError,
)
from .utils.logger import setup_logger

__version__ = "0.1.0"

# Set up root logger
logger = setup_logger(__name__)

__all__ = [
    "RunConfig",
    "env_settings",
    "load_run_config",
    "logger",
    "FeatureSet",
    "FusionMode",
    "ModelStream",
    "PoseFormat",
    "Preset",
    "GaitFusionError",
    "ConfigurationError",
    "ContractError",
    "DataValidationError",
    "PoseParseError",
    "DegenerateSequenceError",
    "CheckpointError",
]
