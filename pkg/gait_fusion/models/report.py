from typing import Dict, List, Optional

from pydantic import BaseModel, Field, model_validator


class EvalReport(BaseModel):
    """Clip-level evaluation of one model configuration"""
    name: str = "model"
    num_classes: int
    confusion: List[List[int]]
    accuracy: float
    weighted_f1: float
    linear_kappa: float
    per_class_recall: List[Optional[float]]
    per_class_auc: List[Optional[float]]
    support: List[int]
    patient_accuracy: Optional[float] = None
    feature_set: Optional[str] = None
    fusion: Optional[str] = None
    stream: Optional[str] = None

    @model_validator(mode="after")
    def _check(self) -> "EvalReport":
        k = self.num_classes
        if len(self.confusion) != k or any(len(row) != k for row in self.confusion):
            raise ValueError("confusion matrix must be K x K")
        if any(v < 0 for row in self.confusion for v in row):
            raise ValueError("confusion entries must be nonnegative")
        if not 0.0 <= self.accuracy <= 1.0:
            raise ValueError("accuracy must lie in [0, 1]")
        if not -1.0 <= self.linear_kappa <= 1.0:
            raise ValueError("kappa must lie in [-1, 1]")
        return self


class EpochRecord(BaseModel):
    """One row of the training log"""
    epoch: int
    phase: int
    loss: float
    val_acc: float
    lr: float
    best: bool = False


class RunLog(BaseModel):
    """Per-epoch history of a training run"""
    epochs: List[EpochRecord] = Field(default_factory=list)
    best_epoch: Optional[int] = None
    early_stopped: bool = False

    @property
    def best_val_acc(self) -> float:
        if self.best_epoch is None:
            return 0.0
        return next(r.val_acc for r in self.epochs if r.epoch == self.best_epoch)


class AttributionMap(BaseModel):
    """Per-keypoint attribution scores of one clip (or a set mean)"""
    video_id: str
    start_frame: int = 0
    target_class: int
    predicted_class: int
    scores: List[float]
    regions: Dict[str, float] = Field(default_factory=dict)
    method: str = "grad_cam"

    @model_validator(mode="after")
    def _check(self) -> "AttributionMap":
        if len(self.scores) != 17:
            raise ValueError("attribution maps have 17 keypoint scores")
        if any(s < 0 for s in self.scores):
            raise ValueError("attribution scores must be nonnegative")
        return self
