"""Kinematic walker that produces labelled COCO-17 sequences with known gait parameters.

Joint angles follow sinusoids at the class stride frequency. Hip flexion is
measured from the trunk's downward extension and knee flexion from the thigh,
so the angles recovered at the hip and knee are ``180 - flexion`` and their
ranges of motion equal the generator's ROM parameters exactly.
"""

from dataclasses import dataclass
from typing import List

import numpy as np

from ..constants import (
    GMFCS_LEVELS,
    L_ANKLE,
    L_EAR,
    L_ELBOW,
    L_HIP,
    L_KNEE,
    L_SHOULDER,
    L_WRIST,
    NOSE,
    NUM_COCO_KEYPOINTS,
    R_ANKLE,
    R_EAR,
    R_ELBOW,
    R_HIP,
    R_KNEE,
    R_SHOULDER,
    R_WRIST,
    PoseFormat,
)
from ..models.pose import GaitTruth, PoseSequence, SyntheticSpec
from ..utils.logger import setup_logger
from ..utils.seeding import derive_rng

logger = setup_logger(__name__)

THIGH = 0.9
SHANK = 0.85
UPPER_ARM = 0.55
FOREARM = 0.5
HIP_FLEX_FLOOR = 5.0
KNEE_FLEX_FLOOR = 5.0
KNEE_PHASE_LAG = np.pi / 2
TRUNK_WOBBLE_DEG = 0.5
PELVIS_BOB = 0.02
ARM_SWING_PER_HIP_ROM = 15.0 / 40.0
ELBOW_FLEX_DEG = 15.0
DENSE_SAMPLES = 3600


@dataclass
class WalkerParams:
    """Per-sequence kinematic parameters (angles in degrees, lengths in pixels)"""
    stride_freq_hz: float
    hip_rom: float
    knee_rom: float
    asymmetry: float
    trunk_lean: float
    torso_px: float
    phase: float
    direction: int

    @property
    def hip_rom_r(self) -> float:
        return self.hip_rom * (1.0 - self.asymmetry)

    @property
    def knee_rom_r(self) -> float:
        return self.knee_rom * (1.0 - self.asymmetry)


def trunk_lean(u: np.ndarray, lean: float) -> np.ndarray:
    return lean + TRUNK_WOBBLE_DEG * np.sin(2.0 * u)


def leg_angles(u: np.ndarray, hip_rom: float, knee_rom: float, lean: np.ndarray):
    """World angles (degrees, forward of straight down) of thigh and shank at gait phase ``u``."""
    hip_flex = HIP_FLEX_FLOOR + hip_rom / 2.0 + (hip_rom / 2.0) * np.sin(u)
    knee_flex = KNEE_FLEX_FLOOR + knee_rom * (1.0 + np.sin(u + KNEE_PHASE_LAG)) / 2.0
    thigh = hip_flex - lean
    return thigh, thigh - knee_flex


def ankle_forward(u: np.ndarray, hip_rom: float, knee_rom: float, lean: float) -> np.ndarray:
    """Forward ankle offset from the hip in torso units."""
    thigh, shank = leg_angles(u, hip_rom, knee_rom, trunk_lean(u, lean))
    return THIGH * np.sin(np.radians(thigh)) + SHANK * np.sin(np.radians(shank))


def max_separations(params: WalkerParams):
    """Largest left-ahead and right-ahead ankle separations (torso units) over one cycle."""
    u = np.linspace(0.0, 2.0 * np.pi, DENSE_SAMPLES, endpoint=False)
    sep = (ankle_forward(u, params.hip_rom, params.knee_rom, params.trunk_lean)
           - ankle_forward(u + np.pi, params.hip_rom_r, params.knee_rom_r, params.trunk_lean))
    return float(sep.max()), float(-sep.min())


def _unit(deg: np.ndarray) -> np.ndarray:
    rad = np.radians(deg)
    return np.stack([np.sin(rad), -np.cos(rad)], axis=-1)


def render_walker(params: WalkerParams, num_frames: int, fps: float) -> np.ndarray:
    """Noise-free (T, 17, 2) image coordinates (y grows downwards)."""
    L = params.torso_px
    s_left, s_right = max_separations(params)
    speed = (s_left + s_right) * L * params.stride_freq_hz

    t = np.arange(num_frames) / fps
    u = 2.0 * np.pi * params.stride_freq_hz * t + params.phase
    lean = trunk_lean(u, params.trunk_lean)

    # world frame: x forward, y up, origin on the ground under the start position
    hip = np.stack([speed * t, (THIGH + SHANK) * L + PELVIS_BOB * L * np.cos(2.0 * u)], axis=-1)
    trunk_dir = np.stack([np.sin(np.radians(lean)), np.cos(np.radians(lean))], axis=-1)
    shoulder = hip + L * trunk_dir
    forward = np.array([1.0, 0.0])

    world = np.zeros((num_frames, NUM_COCO_KEYPOINTS, 2))
    for side_u, hip_rom, knee_rom, (h, k, a), (sh, el, wr) in (
        (u, params.hip_rom, params.knee_rom, (L_HIP, L_KNEE, L_ANKLE), (L_SHOULDER, L_ELBOW, L_WRIST)),
        (u + np.pi, params.hip_rom_r, params.knee_rom_r, (R_HIP, R_KNEE, R_ANKLE), (R_SHOULDER, R_ELBOW, R_WRIST)),
    ):
        thigh, shank = leg_angles(side_u, hip_rom, knee_rom, lean)
        world[:, h] = hip
        world[:, k] = hip + THIGH * L * _unit(thigh)
        world[:, a] = world[:, k] + SHANK * L * _unit(shank)
        # arms swing against the ipsilateral leg
        swing = ARM_SWING_PER_HIP_ROM * hip_rom * np.sin(side_u + np.pi)
        world[:, sh] = shoulder
        world[:, el] = shoulder + UPPER_ARM * L * _unit(swing)
        world[:, wr] = world[:, el] + FOREARM * L * _unit(swing + ELBOW_FLEX_DEG)

    ear = shoulder + 0.3 * L * trunk_dir + 0.05 * L * forward
    world[:, L_EAR] = world[:, R_EAR] = ear
    world[:, 1] = world[:, 2] = ear + L * np.array([0.08, 0.02])
    world[:, NOSE] = ear + L * np.array([0.12, -0.01])

    ground_y = (THIGH + SHANK + 1.6) * L + 50.0
    image = np.empty_like(world)
    image[..., 0] = 200.0 + params.direction * world[..., 0]
    image[..., 1] = ground_y - world[..., 1]
    return image


def walker_truth(params: WalkerParams) -> GaitTruth:
    s_left, s_right = max_separations(params)
    return GaitTruth(
        cadence_spm=120.0 * params.stride_freq_hz,
        knee_rom_deg_l=params.knee_rom,
        knee_rom_deg_r=params.knee_rom_r,
        step_len_norm=(s_left + s_right) / 2.0,
        hip_rom_deg_l=params.hip_rom,
        hip_rom_deg_r=params.hip_rom_r,
        stride_freq_hz=params.stride_freq_hz,
        walking_speed_norm=(s_left + s_right) * params.stride_freq_hz,
    )


def sample_params(spec: SyntheticSpec, class_index: int, rng: np.random.Generator) -> WalkerParams:
    def jittered(value: float) -> float:
        return float(value * (1.0 + spec.jitter * rng.uniform(-1.0, 1.0)))

    return WalkerParams(
        stride_freq_hz=jittered(spec.stride_freq_hz[class_index]),
        hip_rom=jittered(spec.hip_rom_deg[class_index]),
        knee_rom=jittered(spec.knee_rom_deg[class_index]),
        asymmetry=min(jittered(spec.asymmetry[class_index]), 0.95),
        trunk_lean=jittered(spec.trunk_lean_deg[class_index]),
        torso_px=jittered(spec.torso_px),
        phase=float(rng.uniform(0.0, 2.0 * np.pi)),
        direction=1 if rng.random() < 0.5 else -1,
    )


def synth_sequence(spec: SyntheticSpec, level: int, index: int, seed: int) -> PoseSequence:
    """One walker sequence; its random stream depends only on (seed, level, index)."""
    rng = derive_rng(seed, level, index)
    params = sample_params(spec, level - 1, rng)
    xy = render_walker(params, spec.num_frames, spec.fps)
    if spec.noise_sigma_px > 0:
        xy = xy + rng.normal(0.0, spec.noise_sigma_px, size=xy.shape)
    conf = rng.uniform(0.8, 1.0, size=xy.shape[:2] + (1,))
    return PoseSequence(
        patient_id=f"synth-L{level}-P{index:04d}",
        video_id=f"synth-L{level}-V{index:04d}",
        label=level,
        fps=spec.fps,
        format=PoseFormat.COCO17,
        frames=np.concatenate([xy, conf], axis=-1),
        truth=walker_truth(params),
    )


def synth_generate(spec: SyntheticSpec, seed: int = 0) -> List[PoseSequence]:
    """``clips_per_class`` walker sequences for each GMFCS level, with ground truth attached."""
    sequences = [
        synth_sequence(spec, level, index, seed)
        for level in GMFCS_LEVELS
        for index in range(spec.clips_per_class)
    ]
    logger.info(f"Generated {len(sequences)} synthetic sequences ({spec.clips_per_class} per level)")
    return sequences
