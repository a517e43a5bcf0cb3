"""Constants used throughout the gait severity pipeline."""

from enum import Enum
from typing import Dict, List, Tuple


class PoseFormat(str, Enum):
    """Keypoint layouts accepted on input."""
    BODY25 = "BODY25"
    COCO17 = "COCO17"


class FusionMode(str, Enum):
    """How the skeleton and clinical embeddings are combined."""
    CONCAT = "concat"
    CROSS_ATTENTION = "xattn"


class ModelStream(str, Enum):
    """Which streams feed the classification head."""
    FUSED = "fused"
    SKELETON = "skeleton"
    CLINICAL = "clinical"


class FeatureSet(str, Enum):
    """Clinical feature sets."""
    ALL24 = "all24"
    SELECTED14 = "selected14"


class Preset(str, Enum):
    """Backbone width presets."""
    PAPER = "paper"
    DESK = "desk"


class BodyRegion(str, Enum):
    """Keypoint regions used to summarise attributions."""
    HEAD = "Head"
    ARM = "Arm"
    TRUNK = "Trunk"
    KNEE = "Knee"
    HIP = "Hip"
    ANKLE = "Ankle"


# Keypoint layouts
COCO_KEYPOINTS: List[str] = [
    "nose", "left_eye", "right_eye", "left_ear", "right_ear",
    "left_shoulder", "right_shoulder", "left_elbow", "right_elbow",
    "left_wrist", "right_wrist", "left_hip", "right_hip",
    "left_knee", "right_knee", "left_ankle", "right_ankle",
]
NUM_COCO_KEYPOINTS = 17
NUM_BODY25_KEYPOINTS = 25

# COCO index i takes BODY25 index BODY25_TO_COCO17[i]; neck, mid-hip and feet are dropped
BODY25_TO_COCO17: List[int] = [0, 16, 15, 18, 17, 5, 2, 6, 3, 7, 4, 12, 9, 13, 10, 14, 11]

FLIP_PAIRS: List[Tuple[int, int]] = [
    (1, 2), (3, 4), (5, 6), (7, 8), (9, 10), (11, 12), (13, 14), (15, 16),
]

COCO_BONES: List[Tuple[int, int]] = [
    (0, 1), (0, 2), (1, 3), (2, 4), (0, 5), (0, 6), (5, 7), (7, 9), (6, 8),
    (8, 10), (5, 11), (6, 12), (11, 13), (13, 15), (12, 14), (14, 16), (5, 6), (11, 12),
]

# Named keypoint indices
NOSE = 0
L_EAR, R_EAR = 3, 4
L_SHOULDER, R_SHOULDER = 5, 6
L_ELBOW, R_ELBOW = 7, 8
L_WRIST, R_WRIST = 9, 10
L_HIP, R_HIP = 11, 12
L_KNEE, R_KNEE = 13, 14
L_ANKLE, R_ANKLE = 15, 16

REGION_KEYPOINTS: Dict[BodyRegion, Tuple[int, ...]] = {
    BodyRegion.HEAD: (0, 1, 2, 3, 4),
    BodyRegion.ARM: (7, 8, 9, 10),
    BodyRegion.TRUNK: (5, 6),
    BodyRegion.HIP: (11, 12),
    BodyRegion.KNEE: (13, 14),
    BodyRegion.ANKLE: (15, 16),
}

# Clinical features, canonical order
FEATURE_NAMES: List[str] = [
    "hip_rom_l", "hip_rom_r", "hip_rom_sym",
    "knee_rom_l", "knee_rom_r", "knee_rom_sym",
    "hip_mean_l", "hip_mean_r", "knee_mean_l", "knee_mean_r",
    "neck_angle_mean", "arm_body_angle_mean", "arm_swing_amp_l", "arm_swing_amp_r",
    "trunk_incl_mean", "lateral_sway",
    "cadence_spm", "gait_cycle_dur_s", "stance_swing_ratio",
    "step_len_norm", "stride_len_norm", "walking_speed_norm",
    "step_len_sym", "timing_sym",
]

SELECTED_FEATURES: List[str] = [
    "hip_rom_l", "hip_rom_r", "hip_rom_sym",
    "knee_rom_l", "knee_rom_r", "knee_rom_sym",
    "trunk_incl_mean",
    "step_len_norm", "stride_len_norm", "walking_speed_norm",
    "cadence_spm", "gait_cycle_dur_s",
    "step_len_sym", "timing_sym",
]

SELECTED_FEATURE_REGIONS: Dict[str, List[str]] = {
    "hip": ["hip_rom_l", "hip_rom_r", "hip_rom_sym"],
    "knee": ["knee_rom_l", "knee_rom_r", "knee_rom_sym"],
    "trunk": ["trunk_incl_mean"],
    "spatial": ["step_len_norm", "stride_len_norm", "walking_speed_norm"],
    "temporal": ["cadence_spm", "gait_cycle_dur_s"],
    "symmetry": ["step_len_sym", "timing_sym"],
}

BILATERAL_FEATURE_PAIRS: List[Tuple[str, str]] = [
    ("hip_rom_l", "hip_rom_r"),
    ("knee_rom_l", "knee_rom_r"),
    ("hip_mean_l", "hip_mean_r"),
    ("knee_mean_l", "knee_mean_r"),
    ("arm_swing_amp_l", "arm_swing_amp_r"),
]

TEMPORAL_FEATURES = ("cadence_spm", "gait_cycle_dur_s", "stance_swing_ratio", "timing_sym")
SPATIAL_FEATURES = ("step_len_norm", "stride_len_norm", "walking_speed_norm", "step_len_sym")

# GMFCS levels
GMFCS_LEVELS = (1, 2, 3, 4)
NUM_CLASSES = 4

# Preprocessing defaults
DEFAULT_WINDOW = 124
DEFAULT_STRIDE = 12
DEFAULT_MIN_CONF = 0.2
DEFAULT_MIN_FRAC = 0.8
DEFAULT_FPS = 30.0
DEFAULT_NOISE_SIGMA_PX = 2.0
MIN_TORSO_LENGTH = 1e-6

# Gait feature defaults
SMOOTHING_WINDOW = 5
REFRACTORY_FRACTION = 0.25
STANCE_VELOCITY_FRACTION = 0.25
DEFAULT_SMOOTH_CUTOFF_HZ = 6.0
DEFAULT_MIN_EVENT_PROMINENCE = 0.05
SI_EPS = 1e-8
STANDARDIZER_EPS = 1e-8

# Numerical constants
BATCH_NORM_EPS = 1e-5
BATCH_NORM_MOMENTUM = 0.1
LAYER_NORM_EPS = 1e-5
TEMPORAL_KERNEL = 9
FINITE_DIFF_FLOOR = 1e-8

# Model defaults
BLOCK_DROPOUT = 0.2
ENCODER_HIDDEN = 64
ENCODER_DROPOUT = 0.3
HEAD_DROPOUT = 0.3

# Checkpoint
CHECKPOINT_MAGIC = b"GAITCKPT"
CHECKPOINT_VERSION = 1

# Output file names
RESOLVED_CONFIG_FILE = "resolved_config.json"
CHECKPOINT_FILE = "model.ckpt"
RUN_LOG_FILE = "run_log.csv"
FEATURES_FILE = "features.csv"
EVAL_REPORT_FILE = "eval_report.json"
CONFUSION_FILE = "confusion.csv"
PREDICTIONS_FILE = "predictions.csv"
SUMMARY_FILE = "summary.txt"

# Error messages
ERR_INVALID_LABEL = "GMFCS level must be in 1-4, got {}"
ERR_INVALID_CONFIDENCE = "confidence values must lie in [0, 1]"
ERR_INVALID_KEYPOINT_COUNT = "format {} expects {} keypoints per frame, got {}"
ERR_INVALID_JSON = "Invalid JSON format: {}"
ERR_MISSING_FIELD = "Missing required field: {}"
ERR_INVALID_CONFIG = "Invalid configuration: {}"
ERR_SHAPE_MISMATCH = "shape mismatch in {}: {} vs {}"
ERR_DEGENERATE_SEQUENCE = "median torso length {:.3g} is below {:.0e} for video {}"
ERR_UNKNOWN_FEATURE = "Unknown feature name: {}"
ERR_CHECKPOINT = "Checkpoint error: {}"
