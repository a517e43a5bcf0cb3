"""Two-phase training: frozen backbone, then the last blocks unfrozen under a cosine schedule."""

import copy
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd
from tqdm import tqdm

from ..config import FeatureConfig, RunConfig, TrainConfig
from ..constants import RUN_LOG_FILE
from ..exceptions import ContractError
from ..models.features import FeatureSubset
from ..models.pose import ClipWindow, DatasetSplit
from ..models.report import EpochRecord, EvalReport, RunLog
from ..utils.logger import setup_logger
from ..utils.seeding import derive_rng
from . import autodiff as ad
from .autodiff import Tensor
from .backbone import freeze_backbone, set_trainable
from .fusion import GaitSeverityModel, predict
from .gait_features import extract_batch, fit_standardizer, flip_permutation, resolve_subset, select_subset
from .metrics import evaluate
from .pose_data import augment_flip, augment_noise

logger = setup_logger(__name__)

# random stream ids, combined with (epoch, index)
_STREAM_SHUFFLE, _STREAM_AUGMENT, _STREAM_DROPOUT = 10, 11, 12


# ---------------------------------------------------------------------------
# Optimizer and schedule
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    """Adam moments per parameter name, created on first update"""
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)
    t: Dict[str, int] = field(default_factory=dict)

    @classmethod
    def from_config(cls, config: TrainConfig) -> "AdamState":
        return cls(beta1=config.beta1, beta2=config.beta2, eps=config.adam_eps)

    def arrays(self) -> Dict[str, np.ndarray]:
        """Moments keyed as ``<param>.adam_m`` / ``<param>.adam_v``."""
        out = {}
        for name in sorted(self.m):
            out[f"{name}.adam_m"] = self.m[name]
            out[f"{name}.adam_v"] = self.v[name]
        return out

    def load_arrays(self, arrays: Dict[str, np.ndarray], steps: Dict[str, int]) -> None:
        self.m, self.v, self.t = {}, {}, {}
        for name, count in steps.items():
            self.m[name] = np.array(arrays[f"{name}.adam_m"])
            self.v[name] = np.array(arrays[f"{name}.adam_v"])
            self.t[name] = int(count)


def adam_step(params: Dict[str, Tensor], state: AdamState, lr: float, weight_decay: float = 0.0,
              decoupled: bool = False) -> int:
    """One Adam update of every trainable parameter that has a gradient.

    Coupled mode adds ``weight_decay * param`` to the gradient; decoupled mode
    subtracts ``lr * weight_decay * param`` after the moment update. Returns
    the number of tensors updated.
    """
    if lr <= 0:
        raise ContractError(f"learning rate must be positive, got {lr}")
    state.step += 1
    updated = 0
    for name, p in params.items():
        if not p.requires_grad or p.grad is None:
            continue
        if p.grad.shape != p.data.shape:
            raise ContractError(f"gradient of {name} has shape {p.grad.shape}, parameter {p.data.shape}")
        grad = p.grad.astype(np.float64)
        data = p.data.astype(np.float64)
        if weight_decay and not decoupled:
            grad = grad + weight_decay * data
        if name not in state.m:
            state.m[name] = np.zeros_like(data)
            state.v[name] = np.zeros_like(data)
            state.t[name] = 0
        if state.m[name].shape != data.shape:
            raise ContractError(f"optimizer moments of {name} do not match its shape")
        state.t[name] += 1
        t = state.t[name]
        state.m[name] = state.beta1 * state.m[name] + (1.0 - state.beta1) * grad
        state.v[name] = state.beta2 * state.v[name] + (1.0 - state.beta2) * grad ** 2
        m_hat = state.m[name] / (1.0 - state.beta1 ** t)
        v_hat = state.v[name] / (1.0 - state.beta2 ** t)
        data = data - lr * m_hat / (np.sqrt(v_hat) + state.eps)
        if weight_decay and decoupled:
            data = data - lr * weight_decay * p.data.astype(np.float64)
        p.data = data.astype(p.data.dtype)
        updated += 1
    return updated


def lr_schedule(epoch: int, config: TrainConfig) -> float:
    """Constant phase-1 rate, then cosine from phase2_lr to eta_min over the remaining epochs."""
    if not 1 <= epoch <= config.total_epochs:
        raise ContractError(f"epoch {epoch} outside [1, {config.total_epochs}]")
    if epoch <= config.phase1_epochs:
        return config.phase1_lr
    first = config.phase1_epochs + 1
    span = config.total_epochs - first
    if span == 0:
        return config.phase2_lr
    progress = (epoch - first) / span
    return config.eta_min + 0.5 * (config.phase2_lr - config.eta_min) * (1.0 + math.cos(math.pi * progress))


def phase_of(epoch: int, config: TrainConfig) -> int:
    return 1 if epoch <= config.phase1_epochs else 2


class EarlyStopping:
    """Tracks the best validation accuracy; the earliest epoch wins ties."""

    def __init__(self, patience: int):
        if patience < 1:
            raise ContractError("patience must be at least 1")
        self.patience = patience
        self.best_value: Optional[float] = None
        self.best_epoch: Optional[int] = None
        self.stale = 0

    def update(self, epoch: int, value: float) -> bool:
        """Record one epoch; True when it is the new best."""
        if self.best_value is None or value > self.best_value:
            self.best_value, self.best_epoch, self.stale = value, epoch, 0
            return True
        self.stale += 1
        return False

    @property
    def should_stop(self) -> bool:
        return self.stale >= self.patience


# ---------------------------------------------------------------------------
# Data
# ---------------------------------------------------------------------------

@dataclass
class ClipSet:
    """Stacked clips, raw subset features and 0-based labels of one split part"""
    clips: List[ClipWindow]
    features: Optional[np.ndarray]
    labels: np.ndarray

    def __len__(self) -> int:
        return len(self.clips)

    @property
    def patient_ids(self) -> List[str]:
        return [c.patient_id for c in self.clips]


def clip_features(clips: Sequence[ClipWindow], subset: Union[FeatureSubset, Sequence[str]],
                  config: Optional[FeatureConfig] = None) -> np.ndarray:
    """Raw feature matrix (N x |subset|) extracted from the clips."""
    subset = resolve_subset(subset)
    if not clips:
        return np.zeros((0, len(subset)))
    return np.stack([select_subset(v, subset) for v in extract_batch(clips, config)])


def make_clip_set(clips: Sequence[ClipWindow], features: Optional[np.ndarray] = None) -> ClipSet:
    labels = np.array([c.label - 1 for c in clips], dtype=np.int64)
    if features is not None and len(features) != len(clips):
        raise ContractError(f"{len(features)} feature rows for {len(clips)} clips")
    return ClipSet(clips=list(clips), features=features, labels=labels)


def _stack(clips: Sequence[ClipWindow]) -> np.ndarray:
    return np.stack([c.X for c in clips])


def class_weights(labels: np.ndarray, num_classes: int) -> np.ndarray:
    """Inverse-frequency weights normalized to mean 1 over present classes."""
    counts = np.bincount(labels, minlength=num_classes).astype(np.float64)
    weights = np.ones(num_classes)
    present = counts > 0
    weights[present] = counts[present].sum() / (present.sum() * counts[present])
    return weights


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------

@dataclass
class TrainResult:
    """Best-epoch state of a training run"""
    run_log: RunLog
    best_state: Dict[str, np.ndarray]
    optimizer: AdamState
    best_epoch: int
    seed: int


class Trainer:
    """Runs the two-phase schedule for one model and split"""

    def __init__(self, model: GaitSeverityModel, run_config: RunConfig, progress: bool = False):
        self.model = model
        self.config = run_config.training
        self.seed = run_config.seed
        self.min_conf = run_config.data.min_conf
        self.progress = progress
        self.optimizer = AdamState.from_config(self.config)
        self.feature_flip = flip_permutation(model.feature_names) if model.feature_names else None

    def _augment(self, clip: ClipWindow, features: Optional[np.ndarray], epoch: int, index: int):
        rng = derive_rng(self.seed, _STREAM_AUGMENT, epoch, index)
        flip = rng.random() < self.config.flip_prob
        if flip:
            if self.model.uses_skeleton:
                clip = augment_flip(clip, self.min_conf)
            if features is not None:
                features = features[self.feature_flip]
        if self.model.uses_skeleton and self.config.noise_sigma_px > 0:
            clip = augment_noise(clip, self.config.noise_sigma_px, rng)
        return clip, features

    def _batch(self, data: ClipSet, indices: np.ndarray, epoch: int):
        clips, raw = [], []
        for i in indices:
            clip, features = self._augment(
                data.clips[i], None if data.features is None else data.features[i], epoch, int(i))
            clips.append(clip)
            raw.append(features)
        x = _stack(clips) if self.model.uses_skeleton else None
        z = self.model.standardize(np.stack(raw)) if self.model.uses_clinical else None
        return x, z, data.labels[indices]

    def _enter_phase(self, phase: int) -> None:
        if self.model.backbone is None:
            return
        if phase == 1:
            freeze_backbone(self.model.store)
        else:
            set_trainable(self.model.store, self.config.unfreeze_blocks, True,
                          self.model.backbone_config.num_blocks)
        trainable = sum(t.data.size for t in self.model.store.trainable().values())
        logger.info(f"Phase {phase}: {trainable} trainable weights")

    def _train_epoch(self, data: ClipSet, epoch: int, lr: float, weights: Optional[np.ndarray]) -> float:
        n = len(data)
        order = derive_rng(self.seed, _STREAM_SHUFFLE, epoch).permutation(n)
        total = 0.0
        for b, start in enumerate(range(0, n, self.config.batch_size)):
            indices = order[start:start + self.config.batch_size]
            x, z, labels = self._batch(data, indices, epoch)
            self.model.store.zero_grad()
            rng = derive_rng(self.seed, _STREAM_DROPOUT, epoch, b)
            logits = self.model.forward(x, z, training=True, rng=rng)
            loss = ad.softmax_cross_entropy(logits, labels, weights)
            ad.backward(loss)
            adam_step(self.model.store.params, self.optimizer, lr, self.config.weight_decay,
                      self.config.decoupled_weight_decay)
            total += float(loss.data) * len(indices)
        return total / n

    def validation_accuracy(self, data: ClipSet) -> float:
        x = _stack(data.clips) if self.model.uses_skeleton else None
        pred, _ = predict(self.model, x, data.features, batch_size=max(self.config.batch_size, 64))
        return float(np.mean(pred == data.labels))

    def fit(self, train_set: ClipSet, val_set: ClipSet) -> TrainResult:
        if len(train_set) == 0 or len(val_set) == 0:
            raise ContractError("training needs nonempty train and validation sets")
        if self.model.uses_clinical:
            if train_set.features is None or val_set.features is None:
                raise ContractError("this model needs clinical features for train and validation")
            self.model.standardizer = fit_standardizer(train_set.features, self.model.feature_names)
        weights = class_weights(train_set.labels, self.model.num_classes) if self.config.class_weighted_loss else None

        run_log = RunLog()
        stopper = EarlyStopping(self.config.patience)
        best_state = self.model.store.snapshot()
        best_optimizer = copy.deepcopy(self.optimizer)
        phase = 0
        epochs = tqdm(range(1, self.config.total_epochs + 1), desc="epochs", disable=not self.progress)
        for epoch in epochs:
            if phase_of(epoch, self.config) != phase:
                phase = phase_of(epoch, self.config)
                self._enter_phase(phase)
            lr = lr_schedule(epoch, self.config)
            loss = self._train_epoch(train_set, epoch, lr, weights)
            val_acc = self.validation_accuracy(val_set)
            improved = stopper.update(epoch, val_acc)
            if improved:
                best_state = self.model.store.snapshot()
                best_optimizer = copy.deepcopy(self.optimizer)
                for record in run_log.epochs:
                    record.best = False
            run_log.epochs.append(EpochRecord(epoch=epoch, phase=phase, loss=loss, val_acc=val_acc, lr=lr,
                                              best=improved))
            logger.info(f"Epoch {epoch}/{self.config.total_epochs} (phase {phase}): loss {loss:.4f}, "
                        f"val acc {val_acc:.4f}, lr {lr:.2e}")
            if stopper.should_stop:
                run_log.early_stopped = True
                logger.info(f"Early stop at epoch {epoch}; best epoch {stopper.best_epoch}")
                break

        run_log.best_epoch = stopper.best_epoch
        self.model.store.load_arrays(best_state)
        return TrainResult(run_log=run_log, best_state=best_state, optimizer=best_optimizer,
                           best_epoch=stopper.best_epoch, seed=self.seed)


def split_clip_sets(model: GaitSeverityModel, split: DatasetSplit, run_config: RunConfig,
                    features: Optional[Dict[str, np.ndarray]] = None) -> Dict[str, ClipSet]:
    """ClipSets for every split part; features are extracted when not supplied."""
    if model.uses_clinical and not model.feature_names:
        raise ContractError("a model with a clinical stream needs feature names")
    sets = {}
    for part in ("train", "val", "test"):
        clips = getattr(split, part)
        raw = None
        if model.uses_clinical:
            raw = features[part] if features is not None else clip_features(
                clips, model.feature_names, run_config.features)
        sets[part] = make_clip_set(clips, raw)
    return sets


def train(model: GaitSeverityModel, split: DatasetSplit, run_config: RunConfig,
          features: Optional[Dict[str, np.ndarray]] = None, progress: bool = False) -> TrainResult:
    """Train ``model`` in place and return its best-validation-accuracy state."""
    if not split.train or not split.val:
        raise ContractError("training needs nonempty train and validation splits")
    sets = split_clip_sets(model, split, run_config, features)
    logger.info(f"Training {model.stream.value} model on {len(sets['train'])} clips, "
                f"validating on {len(sets['val'])}")
    return Trainer(model, run_config, progress).fit(sets["train"], sets["val"])


@dataclass
class Evaluation:
    """Metrics, probabilities and per-clip predictions of one evaluated ClipSet"""
    report: EvalReport
    probabilities: np.ndarray
    predictions: pd.DataFrame


def evaluate_model(model: GaitSeverityModel, data: ClipSet, name: str = "model",
                   feature_set: Optional[str] = None) -> Evaluation:
    """Clip-level metrics of ``model`` on one ClipSet."""
    if len(data) == 0:
        raise ContractError("evaluation needs a nonempty clip set")
    x = _stack(data.clips) if model.uses_skeleton else None
    pred, probabilities = predict(model, x, data.features)
    report = evaluate(data.labels, pred, probabilities, model.num_classes, patient_ids=data.patient_ids, name=name,
                      feature_set=feature_set, fusion=model.fusion.value if model.is_fused else None,
                      stream=model.stream.value)
    return Evaluation(report=report, probabilities=probabilities,
                      predictions=prediction_frame(data, pred, probabilities))


def prediction_frame(data: ClipSet, pred: np.ndarray, probabilities: np.ndarray) -> pd.DataFrame:
    """Per-clip predictions with GMFCS levels and class probabilities."""
    frame = pd.DataFrame({
        "patient_id": data.patient_ids,
        "video_id": [c.video_id for c in data.clips],
        "start_frame": [c.start_frame for c in data.clips],
        "label": data.labels + 1,
        "predicted": pred + 1,
    })
    for k in range(probabilities.shape[1]):
        frame[f"p_gmfcs_{k + 1}"] = probabilities[:, k]
    return frame


def run_log_frame(run_log: RunLog) -> pd.DataFrame:
    return pd.DataFrame([r.model_dump() for r in run_log.epochs],
                        columns=["epoch", "phase", "loss", "val_acc", "lr", "best"])


def write_run_log(run_log: RunLog, out_dir: Union[str, Path]) -> Path:
    target = Path(out_dir) / RUN_LOG_FILE
    target.parent.mkdir(parents=True, exist_ok=True)
    run_log_frame(run_log).to_csv(target, index=False, float_format="%.8g")
    return target
