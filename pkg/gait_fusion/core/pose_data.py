"""Pose sequence ingest, normalization, windowing, splitting and augmentation."""

from collections import Counter, defaultdict
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import ValidationError

from ..constants import (
    BODY25_TO_COCO17,
    DEFAULT_FPS,
    DEFAULT_MIN_CONF,
    DEFAULT_MIN_FRAC,
    DEFAULT_STRIDE,
    DEFAULT_WINDOW,
    ERR_DEGENERATE_SEQUENCE,
    ERR_MISSING_FIELD,
    FLIP_PAIRS,
    GMFCS_LEVELS,
    L_HIP,
    L_SHOULDER,
    MIN_TORSO_LENGTH,
    NUM_COCO_KEYPOINTS,
    R_HIP,
    R_SHOULDER,
    PoseFormat,
)
from ..exceptions import ContractError, DegenerateSequenceError, PoseParseError
from ..models.pose import ClipWindow, DatasetSplit, GaitTruth, PoseSequence
from ..utils.json_utils import JSONProcessor
from ..utils.logger import setup_logger
from ..utils.seeding import SeedLike, derive_rng

logger = setup_logger(__name__)

REQUIRED_FIELDS = ("patient_id", "video_id", "gmfcs", "format", "frames")

# COCO index permutation that swaps every left/right pair
FLIP_PERMUTATION = np.arange(NUM_COCO_KEYPOINTS)
for _l, _r in FLIP_PAIRS:
    FLIP_PERMUTATION[_l], FLIP_PERMUTATION[_r] = _r, _l


def _record_to_sequence(record: Dict[str, Any], default_fps: float) -> PoseSequence:
    for field in REQUIRED_FIELDS:
        if field not in record:
            raise ValueError(ERR_MISSING_FIELD.format(field))
    hip_track = record.get("hip_track")
    truth = record.get("truth")
    return PoseSequence(
        patient_id=str(record["patient_id"]),
        video_id=str(record["video_id"]),
        label=record["gmfcs"],
        fps=record.get("fps") or default_fps,
        format=record["format"],
        frames=record["frames"],
        hip_track=None if hip_track is None else np.asarray(hip_track, dtype=np.float64),
        scale=record.get("scale", 1.0),
        truth=None if truth is None else GaitTruth.model_validate(truth),
    )


def load_pose_jsonl(path: Union[str, Path], default_fps: float = DEFAULT_FPS) -> List[PoseSequence]:
    """Read one PoseSequence per non-blank line of a pose JSONL file."""
    sequences = []
    for line_number, record in JSONProcessor.iter_jsonl(path):
        try:
            sequences.append(_record_to_sequence(record, default_fps))
        except (ValidationError, ValueError, TypeError) as e:
            raise PoseParseError(str(e), line_number) from e
    logger.info(f"Loaded {len(sequences)} pose sequences from {path}")
    return sequences


def sequence_to_record(seq: PoseSequence) -> Dict[str, Any]:
    record: Dict[str, Any] = {
        "patient_id": seq.patient_id,
        "video_id": seq.video_id,
        "gmfcs": seq.label,
        "fps": seq.fps,
        "format": seq.format.value,
        "frames": seq.frames.tolist(),
    }
    if seq.hip_track is not None:
        record["hip_track"] = seq.hip_track.tolist()
        record["scale"] = seq.scale
    if seq.truth is not None:
        record["truth"] = seq.truth.model_dump(exclude_none=True)
    return record


def write_pose_jsonl(sequences: Iterable[PoseSequence], path: Union[str, Path]) -> int:
    return JSONProcessor.write_jsonl((sequence_to_record(s) for s in sequences), path)


def body25_to_coco17(seq: PoseSequence) -> PoseSequence:
    """Reindex BODY25 keypoints into COCO-17 order; neck, mid-hip and feet are dropped."""
    if seq.format is not PoseFormat.BODY25:
        raise ContractError(f"body25_to_coco17 needs BODY25 input, got {seq.format.value}")
    return seq.model_copy(update={
        "frames": seq.frames[:, BODY25_TO_COCO17, :].copy(),
        "format": PoseFormat.COCO17,
    })


def to_coco17(seq: PoseSequence) -> PoseSequence:
    return body25_to_coco17(seq) if seq.format is PoseFormat.BODY25 else seq


def torso_lengths(frames: np.ndarray) -> np.ndarray:
    shoulder_mid = frames[:, [L_SHOULDER, R_SHOULDER], :2].mean(axis=1)
    hip_mid = frames[:, [L_HIP, R_HIP], :2].mean(axis=1)
    return np.linalg.norm(shoulder_mid - hip_mid, axis=1)


def normalize_coords(seq: PoseSequence) -> PoseSequence:
    """Hip-centre every frame and divide x, y by the median torso length.

    The pre-normalization hip-midpoint path and the scale are kept on the
    returned sequence so world-frame quantities can be recovered.
    """
    if seq.format is not PoseFormat.COCO17:
        raise ContractError(f"normalize_coords needs COCO17 input, got {seq.format.value}")
    if seq.hip_track is not None:
        logger.debug(f"{seq.video_id} is already normalized")
        return seq
    frames = seq.frames
    scale = float(np.median(torso_lengths(frames)))
    if scale < MIN_TORSO_LENGTH:
        raise DegenerateSequenceError(ERR_DEGENERATE_SEQUENCE.format(scale, MIN_TORSO_LENGTH, seq.video_id))
    hip_mid = frames[:, [L_HIP, R_HIP], :2].mean(axis=1)
    normalized = frames.copy()
    normalized[..., :2] = (frames[..., :2] - hip_mid[:, None, :]) / scale
    return seq.model_copy(update={"frames": normalized, "hip_track": hip_mid, "scale": scale})


def window_count(num_frames: int, window: int = DEFAULT_WINDOW, stride: int = DEFAULT_STRIDE) -> int:
    if num_frames < window:
        return 0
    return (num_frames - window) // stride + 1


def slide_windows(seq: PoseSequence, window: int = DEFAULT_WINDOW, stride: int = DEFAULT_STRIDE) -> List[ClipWindow]:
    """Fixed-length clips starting at 0, stride, 2*stride, ..."""
    if window < 1 or stride < 1:
        raise ContractError(f"window and stride must be >= 1, got {window}, {stride}")
    if seq.format is not PoseFormat.COCO17:
        raise ContractError("windows are cut from COCO17 sequences")
    clips = []
    for i in range(window_count(seq.num_frames, window, stride)):
        start = i * stride
        stop = start + window
        clips.append(ClipWindow(
            X=seq.frames[start:stop].copy(),
            patient_id=seq.patient_id,
            video_id=seq.video_id,
            label=seq.label,
            start_frame=start,
            fps=seq.fps,
            hip_track=None if seq.hip_track is None else seq.hip_track[start:stop].copy(),
            scale=seq.scale,
        ))
    return clips


def valid_fraction(clip: ClipWindow, min_conf: float = DEFAULT_MIN_CONF) -> float:
    return float(np.mean(clip.X[..., 2] >= min_conf))


def quality_filter(clip: ClipWindow, min_conf: float = DEFAULT_MIN_CONF, min_frac: float = DEFAULT_MIN_FRAC) -> bool:
    """True when at least ``min_frac`` of all (frame, keypoint) cells reach ``min_conf``."""
    return valid_fraction(clip, min_conf) >= min_frac - 1e-12


def interpolate_gaps(X: np.ndarray, min_conf: float = DEFAULT_MIN_CONF) -> np.ndarray:
    """Gap-free (T, V, 2) coordinates: low-confidence cells linearly interpolated per keypoint.

    Leading/trailing gaps are held at the nearest valid value; keypoints with
    no valid frame are returned unchanged.
    """
    xy = np.array(X[..., :2], dtype=np.float64)
    conf = X[..., 2]
    frames = np.arange(X.shape[0])
    for v in range(X.shape[1]):
        valid = conf[:, v] >= min_conf
        if valid.all() or not valid.any():
            continue
        for axis in range(2):
            xy[:, v, axis] = np.interp(frames, frames[valid], xy[valid, v, axis])
    return xy


def majority_label(labels: Sequence[int]) -> int:
    """Most frequent label, lowest level on ties."""
    counts = Counter(labels)
    best = max(counts.values())
    return min(label for label, n in counts.items() if n == best)


def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def allocate_patients(n: int, fractions: Tuple[float, float, float]) -> Tuple[int, int, int]:
    """Patient counts (train, val, test) for one class."""
    n_val = _round_half_up(n * fractions[1])
    n_test = _round_half_up(n * fractions[2])
    while n - n_val - n_test < 1:
        if n_val >= n_test:
            n_val -= 1
        else:
            n_test -= 1
    return n - n_val - n_test, n_val, n_test


def patient_stratified_split(
    seqs: Sequence[PoseSequence],
    fractions: Tuple[float, float, float] = (0.6, 0.2, 0.2),
    seed: int = 0,
    window: int = DEFAULT_WINDOW,
    stride: int = DEFAULT_STRIDE,
    min_conf: float = DEFAULT_MIN_CONF,
    min_frac: float = DEFAULT_MIN_FRAC,
) -> DatasetSplit:
    """Assign patients to train/val/test per majority label, then window and filter.

    Patients of a class are shuffled with a stream keyed by (seed, level), so
    the assignment does not depend on input order.
    """
    if len(fractions) != 3 or any(f <= 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise ContractError(f"fractions must be three positive values summing to 1, got {fractions}")

    by_patient: Dict[str, List[PoseSequence]] = defaultdict(list)
    for seq in seqs:
        by_patient[seq.patient_id].append(seq)

    by_class: Dict[int, List[str]] = defaultdict(list)
    for patient_id in sorted(by_patient):
        by_class[majority_label([s.label for s in by_patient[patient_id]])].append(patient_id)

    assignment: Dict[str, str] = {}
    warnings = []
    for level in GMFCS_LEVELS:
        patients = by_class.get(level, [])
        if not patients:
            continue
        if len(patients) < 3:
            message = f"GMFCS level {level} has only {len(patients)} patient(s); assigned to train"
            logger.warning(message)
            warnings.append(message)
            for patient_id in patients:
                assignment[patient_id] = "train"
            continue
        order = derive_rng(seed, level).permutation(len(patients))
        n_train, n_val, _ = allocate_patients(len(patients), tuple(fractions))
        for rank, idx in enumerate(order):
            part = "train" if rank < n_train else "val" if rank < n_train + n_val else "test"
            assignment[patients[idx]] = part

    parts: Dict[str, List[ClipWindow]] = {"train": [], "val": [], "test": []}
    rejected = 0
    for patient_id in sorted(by_patient):
        for seq in by_patient[patient_id]:
            for clip in slide_windows(seq, window, stride):
                if quality_filter(clip, min_conf, min_frac):
                    parts[assignment[patient_id]].append(clip)
                else:
                    rejected += 1

    split = DatasetSplit(seed=seed, warnings=warnings, **parts)
    logger.info(
        f"Split {len(by_patient)} patients into "
        f"{len(split.patients('train'))}/{len(split.patients('val'))}/{len(split.patients('test'))}; "
        f"clips {len(split.train)}/{len(split.val)}/{len(split.test)}, {rejected} rejected by quality"
    )
    return split


def split_distribution(split: DatasetSplit) -> Dict[str, Dict[int, int]]:
    """Per-split clip counts per GMFCS level."""
    table = {}
    for part in ("train", "val", "test"):
        counts = Counter(clip.label for clip in getattr(split, part))
        table[part] = {level: counts.get(level, 0) for level in GMFCS_LEVELS}
    return table


def augment_flip(clip: ClipWindow, min_conf: float = DEFAULT_MIN_CONF) -> ClipWindow:
    """Mirror x about the clip-mean x of valid cells and swap left/right keypoints."""
    X = clip.X
    valid = X[..., 2] >= min_conf
    x_bar = X[..., 0][valid].mean() if valid.any() else X[..., 0].mean()
    flipped = X.copy()
    flipped[..., 0] = 2.0 * x_bar - X[..., 0]
    flipped = flipped[:, FLIP_PERMUTATION, :]
    hip_track = None
    if clip.hip_track is not None:
        hip_track = clip.hip_track.copy()
        hip_track[:, 0] = 2.0 * clip.hip_track[:, 0].mean() - clip.hip_track[:, 0]
    return clip.model_copy(update={"X": flipped, "hip_track": hip_track})


def augment_noise(clip: ClipWindow, sigma: float = 2.0, rng_seed: SeedLike = 0) -> ClipWindow:
    """Add i.i.d. Gaussian noise of ``sigma`` pixels to x and y.

    Coordinates of a normalized clip are in torso units, so sigma is divided by
    the stored scale.
    """
    if sigma < 0:
        raise ContractError(f"sigma must be >= 0, got {sigma}")
    if sigma == 0:
        return clip.model_copy(update={"X": clip.X.copy()})
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else derive_rng(rng_seed)
    noisy = clip.X.copy()
    noisy[..., :2] += rng.normal(0.0, sigma / clip.scale, size=noisy[..., :2].shape)
    return clip.model_copy(update={"X": noisy})


def prepare_sequences(seqs: Iterable[PoseSequence], normalize: bool = True) -> List[PoseSequence]:
    """Convert to COCO17 and (optionally) normalize every sequence."""
    prepared = []
    for seq in seqs:
        seq = to_coco17(seq)
        prepared.append(normalize_coords(seq) if normalize else seq)
    return prepared


def clip_to_record(clip: ClipWindow, part: str) -> Dict[str, Any]:
    record: Dict[str, Any] = {
        "split": part,
        "patient_id": clip.patient_id,
        "video_id": clip.video_id,
        "gmfcs": clip.label,
        "start_frame": clip.start_frame,
        "fps": clip.fps,
        "scale": clip.scale,
        "frames": clip.X.tolist(),
    }
    if clip.hip_track is not None:
        record["hip_track"] = clip.hip_track.tolist()
    return record


def write_windows_jsonl(split: DatasetSplit, path: Union[str, Path]) -> int:
    """One record per clip, tagged with its split part."""
    records = (clip_to_record(clip, part) for part in ("train", "val", "test") for clip in getattr(split, part))
    return JSONProcessor.write_jsonl(records, path)


def distribution_frame(split: DatasetSplit) -> pd.DataFrame:
    """Clip counts per split and GMFCS level, plus total and class-fraction rows."""
    table = split_distribution(split)
    frame = pd.DataFrame.from_dict(table, orient="index")
    frame.columns = [f"GMFCS_{level}" for level in frame.columns]
    frame.loc["total"] = frame.sum(axis=0)
    total = frame.loc["total"].sum()
    frame.loc["fraction"] = frame.loc["total"] / total if total else 0.0
    frame["all"] = frame.sum(axis=1)
    frame.loc["fraction", "all"] = 1.0 if total else 0.0
    frame.index.name = "split"
    return frame
