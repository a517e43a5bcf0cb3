"""Clinical gait features from COCO-17 clips.

Angles use the three-point definition (angle at a joint between two
segment vectors) and are reported in degrees; lengths are in torso units
and speeds in torso units per second.
"""

import math
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import ValidationError
from scipy.ndimage import uniform_filter1d
from scipy.signal import butter, filtfilt, find_peaks

from ..config import FeatureConfig
from ..constants import (
    BILATERAL_FEATURE_PAIRS,
    DEFAULT_MIN_CONF,
    ERR_UNKNOWN_FEATURE,
    FEATURE_NAMES,
    L_ANKLE,
    L_EAR,
    L_ELBOW,
    L_HIP,
    L_KNEE,
    L_SHOULDER,
    L_WRIST,
    R_ANKLE,
    R_EAR,
    R_ELBOW,
    R_HIP,
    R_KNEE,
    R_SHOULDER,
    R_WRIST,
    SI_EPS,
    STANDARDIZER_EPS,
)
from ..exceptions import ConfigurationError, ContractError, DataValidationError
from ..models.features import FeatureSubset, GaitEvents, GaitFeatureVector, Standardizer
from ..models.pose import ClipWindow
from ..utils.logger import setup_logger
from .pose_data import interpolate_gaps

logger = setup_logger(__name__)

BUTTERWORTH_ORDER = 4
SIDES = ("l", "r")
_LEG = {"l": (L_SHOULDER, L_HIP, L_KNEE, L_ANKLE), "r": (R_SHOULDER, R_HIP, R_KNEE, R_ANKLE)}
_ARM = {"l": (L_SHOULDER, L_ELBOW, L_WRIST, L_HIP), "r": (R_SHOULDER, R_ELBOW, R_WRIST, R_HIP)}
_VERTICAL_UP = np.array([0.0, -1.0])


# ---------------------------------------------------------------------------
# Series preparation
# ---------------------------------------------------------------------------

def smooth_series(xy: np.ndarray, fps: float, cutoff_hz: float) -> np.ndarray:
    """Zero-phase Butterworth low-pass along time; skipped when the clip is too short."""
    if cutoff_hz <= 0 or cutoff_hz >= fps / 2.0:
        return xy
    b, a = butter(BUTTERWORTH_ORDER, cutoff_hz / (fps / 2.0), btype="low")
    if xy.shape[0] <= 3 * max(len(a), len(b)):
        return xy
    return filtfilt(b, a, xy, axis=0)


def prepared_coords(clip: ClipWindow, config: FeatureConfig, min_conf: float = DEFAULT_MIN_CONF) -> np.ndarray:
    """Gap-filled, smoothed (T, 17, 2) coordinates in the clip's own frame."""
    return smooth_series(interpolate_gaps(clip.X, min_conf), clip.fps, config.smooth_cutoff_hz)


def world_coords(xy: np.ndarray, clip: ClipWindow) -> np.ndarray:
    """Add back the pre-normalization hip path (torso units)."""
    if clip.hip_track is None:
        return xy
    return xy + (clip.hip_track / clip.scale)[:, None, :]


def _midpoint(xy: np.ndarray, a: int, b: int) -> np.ndarray:
    return 0.5 * (xy[:, a] + xy[:, b])


# ---------------------------------------------------------------------------
# Elementary measures
# ---------------------------------------------------------------------------

def joint_angle_series(p_center: np.ndarray, p_a: np.ndarray, p_b: np.ndarray) -> np.ndarray:
    """Per-frame angle (degrees) at ``p_center`` between the vectors to ``p_a`` and ``p_b``.

    Frames where either vector has zero length are NaN.
    """
    a = np.atleast_2d(np.asarray(p_a, dtype=np.float64) - p_center)
    b = np.atleast_2d(np.asarray(p_b, dtype=np.float64) - p_center)
    norms = np.linalg.norm(a, axis=-1) * np.linalg.norm(b, axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        cosine = np.einsum("...i,...i->...", a, b) / norms
    angles = np.degrees(np.arccos(np.clip(cosine, -1.0, 1.0)))
    angles[norms <= 0] = np.nan
    return angles


def rom(theta: np.ndarray) -> float:
    theta = np.asarray(theta, dtype=np.float64)
    if theta.size == 0:
        raise ContractError("range of motion of an empty series")
    return float(theta.max() - theta.min())


def symmetry_index(x_l: float, x_r: float) -> float:
    """|L - R| / (0.5 (L + R)) in percent; 0 when both sides vanish."""
    if x_l < 0 or x_r < 0:
        raise ContractError(f"symmetry index needs nonnegative inputs, got {x_l}, {x_r}")
    total = x_l + x_r
    if total < SI_EPS:
        return 0.0
    return float(abs(x_l - x_r) / (0.5 * total) * 100.0)


# ---------------------------------------------------------------------------
# Events and temporal/spatial features
# ---------------------------------------------------------------------------

def detect_gait_events(clip: ClipWindow, fps: Optional[float] = None,
                       config: Optional[FeatureConfig] = None) -> GaitEvents:
    """Left events are maxima and right events minima of the smoothed ankle separation.

    The separation is x_left_ankle - x_right_ankle in image orientation,
    independent of the walking direction, so reversing a clip in time mirrors
    its events without swapping sides.
    """
    config = config or FeatureConfig()
    fps = fps or clip.fps
    world = world_coords(prepared_coords(clip, config), clip)
    return events_from_world(world, fps, config)


def events_from_world(world: np.ndarray, fps: float, config: FeatureConfig) -> GaitEvents:
    separation = world[:, L_ANKLE, 0] - world[:, R_ANKLE, 0]
    smoothed = uniform_filter1d(separation, size=config.smoothing_window, mode="nearest")
    distance = max(1, math.ceil(config.refractory_fraction * fps))
    kwargs = {"distance": distance}
    if config.min_event_prominence > 0:
        kwargs["prominence"] = config.min_event_prominence
    left, _ = find_peaks(smoothed, **kwargs)
    right, _ = find_peaks(-smoothed, **kwargs)
    return GaitEvents(left=left, right=right)


def stance_swing_ratio(ankle_x: np.ndarray, fps: float, velocity_fraction: float) -> float:
    """Stance frames over swing frames; stance is |vx| below a fraction of the clip max."""
    if ankle_x.size < 2:
        return 0.0
    speed = np.abs(np.gradient(ankle_x) * fps)
    stance = int(np.count_nonzero(speed < velocity_fraction * speed.max()))
    swing = speed.size - stance
    return stance / swing if swing > 0 else 0.0


def temporal_features(events: GaitEvents, fps: float, ankle_x: Optional[np.ndarray] = None,
                      stance_velocity_fraction: float = 0.25) -> Tuple[float, float, float]:
    """(cadence_spm, gait_cycle_dur_s, stance_swing_ratio) from ipsilateral intervals.

    ``ankle_x`` is an optional (T, 2) array of world left/right ankle x used for
    the stance-swing ratio, averaged over sides.
    """
    if not events.valid:
        raise ContractError("temporal features need at least two events per side")
    intervals = np.concatenate([events.left_intervals, events.right_intervals])
    cycle = float(intervals.mean()) / fps
    cadence = 120.0 / cycle
    ratio = 0.0
    if ankle_x is not None:
        ratio = float(np.mean([stance_swing_ratio(ankle_x[:, i], fps, stance_velocity_fraction) for i in range(2)]))
    return cadence, cycle, ratio


def walking_speed(world: np.ndarray, fps: float) -> float:
    if world.shape[0] < 2:
        return 0.0
    hip_x = _midpoint(world, L_HIP, R_HIP)[:, 0]
    return float(abs(hip_x[-1] - hip_x[0]) / ((world.shape[0] - 1) / fps))


def spatial_features(world: np.ndarray, events: GaitEvents, fps: float) -> Tuple[float, float, float, float]:
    """(step_len_norm, stride_len_norm, walking_speed_norm, step_len_sym) in torso units."""
    if not events.valid:
        raise ContractError("spatial features need at least two events per side")
    separation = np.abs(world[:, L_ANKLE, 0] - world[:, R_ANKLE, 0])
    step = {"l": float(separation[events.left].mean()), "r": float(separation[events.right].mean())}
    stride = {
        "l": float(np.abs(np.diff(world[events.left, L_ANKLE, 0])).mean()),
        "r": float(np.abs(np.diff(world[events.right, R_ANKLE, 0])).mean()),
    }
    return (
        0.5 * (step["l"] + step["r"]),
        0.5 * (stride["l"] + stride["r"]),
        walking_speed(world, fps),
        symmetry_index(step["l"], step["r"]),
    )


# ---------------------------------------------------------------------------
# Postural and joint-angle features
# ---------------------------------------------------------------------------

def leg_angles(xy: np.ndarray, side: str) -> Tuple[np.ndarray, np.ndarray]:
    """Hip (trunk vs thigh) and knee (thigh vs shank) angle series of one side."""
    shoulder, hip, knee, ankle = _LEG[side]
    hip_angle = joint_angle_series(xy[:, hip], xy[:, shoulder], xy[:, knee])
    knee_angle = joint_angle_series(xy[:, knee], xy[:, hip], xy[:, ankle])
    return hip_angle, knee_angle


def postural_features(xy: np.ndarray) -> Dict[str, float]:
    """Head, arm and trunk measures; NaN marks a value that could not be computed."""
    shoulder_mid = _midpoint(xy, L_SHOULDER, R_SHOULDER)
    hip_mid = _midpoint(xy, L_HIP, R_HIP)
    ear_mid = _midpoint(xy, L_EAR, R_EAR)
    ankle_mid = _midpoint(xy, L_ANKLE, R_ANKLE)

    neck = joint_angle_series(shoulder_mid, ear_mid, hip_mid)
    arm_body = [joint_angle_series(xy[:, s], xy[:, e], xy[:, h]) for s, e, _, h in _ARM.values()]
    trunk = joint_angle_series(hip_mid, shoulder_mid, hip_mid + _VERTICAL_UP)

    out = {
        "neck_angle_mean": float(np.mean(neck)),
        "arm_body_angle_mean": float(np.mean(np.concatenate(arm_body))),
        "trunk_incl_mean": float(np.mean(trunk)),
        "lateral_sway": float(np.std(shoulder_mid[:, 0] - ankle_mid[:, 0])),
    }
    for side in SIDES:
        wrist = _ARM[side][2]
        out[f"arm_swing_amp_{side}"] = rom(xy[:, wrist, 0] - hip_mid[:, 0])
    return out


def _angle_features(xy: np.ndarray) -> Dict[str, float]:
    out = {}
    for side in SIDES:
        hip_angle, knee_angle = leg_angles(xy, side)
        out[f"hip_rom_{side}"] = rom(hip_angle)
        out[f"knee_rom_{side}"] = rom(knee_angle)
        out[f"hip_mean_{side}"] = float(np.mean(hip_angle))
        out[f"knee_mean_{side}"] = float(np.mean(knee_angle))
    for joint in ("hip", "knee"):
        left, right = out[f"{joint}_rom_l"], out[f"{joint}_rom_r"]
        out[f"{joint}_rom_sym"] = symmetry_index(left, right) if np.isfinite([left, right]).all() else np.nan
    return out


def extract_all(clip: ClipWindow, fps: Optional[float] = None,
                config: Optional[FeatureConfig] = None) -> GaitFeatureVector:
    """All 24 features in canonical order; invalid entries are zeroed and masked."""
    config = config or FeatureConfig()
    fps = fps or clip.fps
    xy = prepared_coords(clip, config)
    world = world_coords(xy, clip)

    features: Dict[str, float] = {}
    features.update(_angle_features(xy))
    features.update(postural_features(xy))

    # spatial features, speed included, need valid events
    events = events_from_world(world, fps, config)
    if events.valid:
        ankle_x = world[:, [L_ANKLE, R_ANKLE], 0]
        cadence, cycle, ratio = temporal_features(events, fps, ankle_x, config.stance_velocity_fraction)
        step, stride, speed, step_sym = spatial_features(world, events, fps)
        features.update({
            "cadence_spm": cadence,
            "gait_cycle_dur_s": cycle,
            "stance_swing_ratio": ratio,
            "step_len_norm": step,
            "stride_len_norm": stride,
            "walking_speed_norm": speed,
            "step_len_sym": step_sym,
            "timing_sym": symmetry_index(float(events.left_intervals.mean()), float(events.right_intervals.mean())),
        })

    values = np.array([features.get(name, np.nan) for name in FEATURE_NAMES], dtype=np.float64)
    valid = np.isfinite(values)
    if not valid.all():
        invalid = [name for name, ok in zip(FEATURE_NAMES, valid) if not ok]
        logger.debug(f"{clip.video_id}@{clip.start_frame}: invalid features {invalid}")
    return GaitFeatureVector(values=np.where(valid, values, 0.0), valid=valid)


def extract_batch(clips: Sequence[ClipWindow], config: Optional[FeatureConfig] = None) -> List[GaitFeatureVector]:
    vectors = [extract_all(clip, config=config) for clip in clips]
    incomplete = sum(1 for v in vectors if not v.valid.all())
    if incomplete:
        logger.warning(f"{incomplete} of {len(vectors)} clips have invalid features (zeroed)")
    return vectors


# ---------------------------------------------------------------------------
# Subsets, flips and standardization
# ---------------------------------------------------------------------------

def resolve_subset(subset: Union[FeatureSubset, Sequence[str]]) -> FeatureSubset:
    if isinstance(subset, FeatureSubset):
        return subset
    try:
        return FeatureSubset(names=list(subset))
    except ValidationError as e:
        unknown = [n for n in subset if n not in FEATURE_NAMES]
        message = ERR_UNKNOWN_FEATURE.format(", ".join(unknown)) if unknown else str(e)
        raise ConfigurationError(message) from e


def select_subset(v: Union[GaitFeatureVector, np.ndarray], subset: Union[FeatureSubset, Sequence[str]]) -> np.ndarray:
    """Project 24-feature vectors (or an N x 24 matrix) onto a subset, in subset order."""
    indices = resolve_subset(subset).indices
    values = v.values if isinstance(v, GaitFeatureVector) else np.asarray(v, dtype=np.float64)
    return values[..., indices]


def flip_permutation(names: Sequence[str]) -> np.ndarray:
    """Index permutation that swaps every (_l, _r) pair present in ``names``."""
    perm = np.arange(len(names))
    position = {name: i for i, name in enumerate(names)}
    for left, right in BILATERAL_FEATURE_PAIRS:
        if left in position and right in position:
            perm[position[left]], perm[position[right]] = position[right], position[left]
    return perm


def flip_feature_vector(values: np.ndarray, names: Sequence[str] = FEATURE_NAMES) -> np.ndarray:
    """Feature-space counterpart of a left/right flip of the clip."""
    return np.asarray(values)[..., flip_permutation(names)]


def fit_standardizer(vectors: np.ndarray, names: Sequence[str]) -> Standardizer:
    """Per-feature mean and population std of the training rows."""
    matrix = np.asarray(vectors, dtype=np.float64)
    if matrix.ndim != 2 or matrix.shape[0] == 0:
        raise ContractError("standardizer needs a nonempty N x F training matrix")
    if matrix.shape[1] != len(names):
        raise ContractError(f"standardizer got {matrix.shape[1]} columns for {len(names)} names")
    return Standardizer(
        names=list(names),
        mean=matrix.mean(axis=0).tolist(),
        std=matrix.std(axis=0).tolist(),
        eps=STANDARDIZER_EPS,
    )


def apply_standardizer(standardizer: Standardizer, v: np.ndarray) -> np.ndarray:
    values = np.asarray(v, dtype=np.float64)
    if values.shape[-1] != len(standardizer.names):
        raise ContractError(f"expected {len(standardizer.names)} features, got {values.shape[-1]}")
    return standardizer.transform(values)


# ---------------------------------------------------------------------------
# Feature CSV
# ---------------------------------------------------------------------------

def features_frame(clips: Sequence[ClipWindow], vectors: Iterable[GaitFeatureVector]) -> pd.DataFrame:
    rows = []
    for clip, vector in zip(clips, vectors):
        row = {
            "patient_id": clip.patient_id,
            "video_id": clip.video_id,
            "start_frame": clip.start_frame,
            "label": clip.label,
        }
        row.update(vector.as_dict())
        row["validity_mask"] = vector.validity_bitmask
        rows.append(row)
    columns = ["patient_id", "video_id", "start_frame", "label"] + FEATURE_NAMES + ["validity_mask"]
    return pd.DataFrame(rows, columns=columns)


def write_features_csv(frame: pd.DataFrame, path: Union[str, Path]) -> Path:
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(target, index=False, float_format="%.10g")
    return target


def read_features_csv(path: Union[str, Path]) -> pd.DataFrame:
    frame = pd.read_csv(path, dtype={"patient_id": str, "video_id": str})
    missing = [name for name in FEATURE_NAMES if name not in frame.columns]
    if missing:
        raise DataValidationError(f"feature CSV lacks columns: {', '.join(missing)}")
    return frame
