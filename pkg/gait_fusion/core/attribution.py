"""Keypoint attribution: Grad-CAM over the last backbone block and an occlusion check."""

from pathlib import Path
from typing import Dict, List, Literal, Optional, Sequence, Union

import numpy as np
import pandas as pd
from scipy.stats import spearmanr

from ..constants import COCO_KEYPOINTS, NUM_COCO_KEYPOINTS, REGION_KEYPOINTS, BodyRegion
from ..exceptions import ContractError
from ..models.pose import ClipWindow
from ..models.report import AttributionMap
from ..utils.logger import setup_logger
from . import autodiff as ad
from .autodiff import Tensor
from .backbone import clips_to_input
from .fusion import GaitSeverityModel

logger = setup_logger(__name__)

TemporalAgg = Literal["mean", "max"]

KEYPOINT_REGION: Dict[int, BodyRegion] = {
    v: region for region, members in REGION_KEYPOINTS.items() for v in members
}


def _normalize_max(scores: np.ndarray) -> np.ndarray:
    peak = scores.max() if scores.size else 0.0
    return scores / peak if peak > 0 else np.zeros_like(scores)


def cam_from_activations(activation: np.ndarray, gradient: np.ndarray, temporal_agg: TemporalAgg = "mean") -> np.ndarray:
    """Per-keypoint scores in [0, 1] from a (C, T, V) activation map and its gradient."""
    if activation.shape != gradient.shape or activation.ndim != 3:
        raise ContractError(f"activation and gradient must both be C x T x V, got {activation.shape}, {gradient.shape}")
    weights = gradient.astype(np.float64).mean(axis=(1, 2))
    cam = np.maximum(np.einsum("c,ctv->tv", weights, activation.astype(np.float64)), 0.0)
    scores = cam.max(axis=0) if temporal_agg == "max" else cam.mean(axis=0)
    return _normalize_max(scores)


def aggregate_regions(scores: Union[AttributionMap, Sequence[float]]) -> Dict[str, float]:
    """Mean keypoint score per body region."""
    values = np.asarray(scores.scores if isinstance(scores, AttributionMap) else scores, dtype=np.float64)
    return {region.value: float(values[list(members)].mean()) for region, members in REGION_KEYPOINTS.items()}


def _prepare(model: GaitSeverityModel, clip: ClipWindow, raw_features: Optional[np.ndarray]):
    if model.backbone is None:
        raise ContractError("attribution needs a model with a skeleton stream")
    z = None
    if model.uses_clinical:
        if raw_features is None:
            raise ContractError("this model needs the clip's clinical features")
        z = model.standardize(np.atleast_2d(raw_features))
    return z


def grad_cam_keypoints(model: GaitSeverityModel, clip: ClipWindow, raw_features: Optional[np.ndarray] = None,
                       target_class: Optional[int] = None, temporal_agg: TemporalAgg = "mean") -> AttributionMap:
    """Grad-CAM keypoint scores for one clip.

    ``target_class`` is a 0-based class index and defaults to the predicted
    class. The returned map records classes as GMFCS levels.
    """
    z = _prepare(model, clip, raw_features)
    saved_grads = {name: t.grad for name, t in model.store.params.items()}

    x = Tensor(clips_to_input(clip.X[None]))
    activation = Tensor(model.backbone.feature_map(x, training=False).data, requires_grad=True)
    logits = model.forward_from_activation(activation, z)
    predicted = int(np.argmax(logits.data[0]))
    target = predicted if target_class is None else int(target_class)
    if not 0 <= target < model.num_classes:
        raise ContractError(f"target class {target} outside [0, {model.num_classes})")
    ad.backward(ad.sum_all(ad.select(logits, np.array([target]))))
    gradient = activation.grad

    for name, tensor in model.store.params.items():
        tensor.grad = saved_grads[name]

    scores = cam_from_activations(activation.data[0], gradient[0], temporal_agg)
    return AttributionMap(
        video_id=clip.video_id,
        start_frame=clip.start_frame,
        target_class=target + 1,
        predicted_class=predicted + 1,
        scores=scores.tolist(),
        regions=aggregate_regions(scores),
        method="grad_cam",
    )


def occlusion_importance(model: GaitSeverityModel, clip: ClipWindow, raw_features: Optional[np.ndarray] = None,
                         target_class: Optional[int] = None) -> AttributionMap:
    """Drop in target-class probability when one keypoint's channels are zeroed over all frames."""
    z = _prepare(model, clip, raw_features)
    batch = np.repeat(clip.X[None], NUM_COCO_KEYPOINTS + 1, axis=0)
    for v in range(NUM_COCO_KEYPOINTS):
        batch[v + 1, :, v, :] = 0.0
    z_batch = None if z is None else np.repeat(z, NUM_COCO_KEYPOINTS + 1, axis=0)
    probs = ad.softmax(model.forward(batch, z_batch, training=False).data.astype(np.float64))
    predicted = int(np.argmax(probs[0]))
    target = predicted if target_class is None else int(target_class)
    drops = np.maximum(probs[0, target] - probs[1:, target], 0.0)
    scores = _normalize_max(drops)
    return AttributionMap(
        video_id=clip.video_id,
        start_frame=clip.start_frame,
        target_class=target + 1,
        predicted_class=predicted + 1,
        scores=scores.tolist(),
        regions=aggregate_regions(scores),
        method="occlusion",
    )


def rank_correlation(a: Sequence[float], b: Sequence[float]) -> float:
    """Spearman rho with average ranks; 0 when either side has no rank variance."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ContractError(f"rank correlation needs equal-length vectors, got {a.shape}, {b.shape}")
    if np.ptp(a) == 0 or np.ptp(b) == 0:
        return 0.0
    rho, _ = spearmanr(a, b)
    return 0.0 if np.isnan(rho) else float(rho)


def mean_attribution(maps: Sequence[AttributionMap]) -> AttributionMap:
    """Max-normalized mean of several maps of the same method."""
    if not maps:
        raise ContractError("mean attribution over an empty set")
    scores = _normalize_max(np.mean([m.scores for m in maps], axis=0))
    return AttributionMap(
        video_id="__mean__",
        start_frame=0,
        target_class=maps[0].target_class,
        predicted_class=maps[0].predicted_class,
        scores=scores.tolist(),
        regions=aggregate_regions(scores),
        method=f"{maps[0].method}_mean",
    )


def attribution_frame(maps: Sequence[AttributionMap]) -> pd.DataFrame:
    rows = []
    for m in maps:
        for v, score in enumerate(m.scores):
            rows.append({
                "video_id": m.video_id,
                "start_frame": m.start_frame,
                "method": m.method,
                "target_class": m.target_class,
                "predicted_class": m.predicted_class,
                "keypoint": COCO_KEYPOINTS[v],
                "region": KEYPOINT_REGION[v].value,
                "score": score,
            })
    return pd.DataFrame(rows)


def region_frame(maps: Sequence[AttributionMap]) -> pd.DataFrame:
    rows = []
    for m in maps:
        row = {"video_id": m.video_id, "start_frame": m.start_frame, "method": m.method}
        row.update(m.regions)
        rows.append(row)
    return pd.DataFrame(rows, columns=["video_id", "start_frame", "method"] + [r.value for r in BodyRegion])


def write_attribution_report(maps: Sequence[AttributionMap], out_dir: Union[str, Path]) -> List[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    keypoints = out / "attribution.csv"
    regions = out / "attribution_regions.csv"
    attribution_frame(maps).to_csv(keypoints, index=False, float_format="%.6f")
    region_frame(maps).to_csv(regions, index=False, float_format="%.6f")
    logger.info(f"Wrote {len(maps)} attribution maps to {out}")
    return [keypoints, regions]
