from typing import List, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from ..constants import (
    DEFAULT_FPS,
    ERR_INVALID_CONFIDENCE,
    ERR_INVALID_KEYPOINT_COUNT,
    ERR_INVALID_LABEL,
    GMFCS_LEVELS,
    NUM_BODY25_KEYPOINTS,
    NUM_COCO_KEYPOINTS,
    PoseFormat,
)

_EXPECTED_V = {PoseFormat.BODY25: NUM_BODY25_KEYPOINTS, PoseFormat.COCO17: NUM_COCO_KEYPOINTS}


def _check_label(value: int) -> int:
    if value not in GMFCS_LEVELS:
        raise ValueError(ERR_INVALID_LABEL.format(value))
    return value


def _check_confidence(frames: np.ndarray) -> None:
    conf = frames[..., 2]
    if not np.all(np.isfinite(frames)):
        raise ValueError("keypoint values must be finite")
    if conf.size and (conf.min() < 0.0 or conf.max() > 1.0):
        raise ValueError(ERR_INVALID_CONFIDENCE)


class GaitTruth(BaseModel):
    """Closed-form ground truth recorded by the synthetic walker"""
    cadence_spm: float
    knee_rom_deg_l: float
    knee_rom_deg_r: float
    step_len_norm: float
    hip_rom_deg_l: Optional[float] = None
    hip_rom_deg_r: Optional[float] = None
    stride_freq_hz: Optional[float] = None
    walking_speed_norm: Optional[float] = None


class PoseSequence(BaseModel):
    """Per-video keypoint trajectories.

    After normalization ``frames`` holds hip-centred, torso-scaled coordinates,
    ``hip_track`` the pre-normalization hip-midpoint path in pixels and
    ``scale`` the median torso length in pixels.
    """
    model_config = ConfigDict(arbitrary_types_allowed=True)

    patient_id: str
    video_id: str
    label: int
    fps: float = Field(DEFAULT_FPS, gt=0.0)
    format: PoseFormat
    frames: np.ndarray
    hip_track: Optional[np.ndarray] = None
    scale: float = Field(1.0, gt=0.0)
    truth: Optional[GaitTruth] = None

    @field_validator("label")
    @classmethod
    def _valid_label(cls, value: int) -> int:
        return _check_label(value)

    @field_validator("frames", mode="before")
    @classmethod
    def _as_array(cls, value):
        return np.asarray(value, dtype=np.float64)

    @model_validator(mode="after")
    def _check_shape(self) -> "PoseSequence":
        frames = self.frames
        if frames.ndim != 3 or frames.shape[2] != 3 or frames.shape[0] < 1:
            raise ValueError(f"frames must be T x V x 3 with T >= 1, got {frames.shape}")
        expected = _EXPECTED_V[self.format]
        if frames.shape[1] != expected:
            raise ValueError(ERR_INVALID_KEYPOINT_COUNT.format(self.format.value, expected, frames.shape[1]))
        _check_confidence(frames)
        if self.hip_track is not None and self.hip_track.shape != (frames.shape[0], 2):
            raise ValueError("hip_track must be T x 2")
        return self

    @property
    def num_frames(self) -> int:
        return int(self.frames.shape[0])


class ClipWindow(BaseModel):
    """Fixed-length model input cut from a PoseSequence"""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    X: np.ndarray
    patient_id: str
    video_id: str
    label: int
    start_frame: int = Field(0, ge=0)
    fps: float = Field(DEFAULT_FPS, gt=0.0)
    hip_track: Optional[np.ndarray] = None
    scale: float = Field(1.0, gt=0.0)

    @field_validator("label")
    @classmethod
    def _valid_label(cls, value: int) -> int:
        return _check_label(value)

    @field_validator("X", mode="before")
    @classmethod
    def _as_array(cls, value):
        return np.asarray(value, dtype=np.float64)

    @model_validator(mode="after")
    def _check_shape(self) -> "ClipWindow":
        if self.X.ndim != 3 or self.X.shape[1:] != (NUM_COCO_KEYPOINTS, 3) or self.X.shape[0] < 1:
            raise ValueError(f"clip must be T x 17 x 3, got {self.X.shape}")
        _check_confidence(self.X)
        if self.hip_track is not None and self.hip_track.shape != (self.X.shape[0], 2):
            raise ValueError("hip_track must be T x 2")
        return self

    @property
    def num_frames(self) -> int:
        return int(self.X.shape[0])

    def world_coords(self) -> np.ndarray:
        """x, y in torso units with the hip-centring undone (T x 17 x 2)."""
        xy = self.X[..., :2].copy()
        if self.hip_track is not None:
            xy += (self.hip_track / self.scale)[:, None, :]
        return xy


class DatasetSplit(BaseModel):
    """Patient-disjoint train/val/test clips"""
    train: List[ClipWindow] = Field(default_factory=list)
    val: List[ClipWindow] = Field(default_factory=list)
    test: List[ClipWindow] = Field(default_factory=list)
    seed: int = 0
    warnings: List[str] = Field(default_factory=list)

    def patients(self, part: str) -> set:
        return {clip.patient_id for clip in getattr(self, part)}


class SyntheticSpec(BaseModel):
    """Per-class parameters of the synthetic kinematic walker (index 0 is GMFCS I)"""
    model_config = ConfigDict(extra="forbid")

    clips_per_class: int = Field(200, ge=1)
    stride_freq_hz: List[float] = Field(default_factory=lambda: [1.0, 0.9, 0.75, 0.6])
    knee_rom_deg: List[float] = Field(default_factory=lambda: [60.0, 50.0, 38.0, 25.0])
    hip_rom_deg: List[float] = Field(default_factory=lambda: [40.0, 34.0, 26.0, 18.0])
    asymmetry: List[float] = Field(default_factory=lambda: [0.0, 0.1, 0.2, 0.3])
    trunk_lean_deg: List[float] = Field(default_factory=lambda: [2.0, 5.0, 9.0, 14.0])
    noise_sigma_px: float = Field(2.0, ge=0.0)
    fps: float = Field(DEFAULT_FPS, gt=0.0)
    num_frames: int = Field(148, ge=1)
    torso_px: float = Field(160.0, gt=0.0)
    jitter: float = Field(0.05, ge=0.0, lt=0.5)

    @model_validator(mode="after")
    def _check_classes(self) -> "SyntheticSpec":
        per_class = {
            "stride_freq_hz": self.stride_freq_hz,
            "knee_rom_deg": self.knee_rom_deg,
            "hip_rom_deg": self.hip_rom_deg,
            "asymmetry": self.asymmetry,
            "trunk_lean_deg": self.trunk_lean_deg,
        }
        for name, values in per_class.items():
            if len(values) != len(GMFCS_LEVELS):
                raise ValueError(f"{name} needs one value per GMFCS level")
        for name in ("stride_freq_hz", "knee_rom_deg", "hip_rom_deg"):
            if any(v <= 0 for v in per_class[name]):
                raise ValueError(f"{name} values must be positive")
        if any(a < 0 or a >= 1 for a in self.asymmetry):
            raise ValueError("asymmetry values must lie in [0, 1)")
        if any(b < 0 for b in self.trunk_lean_deg):
            raise ValueError("trunk_lean_deg values must be nonnegative")
        return self
