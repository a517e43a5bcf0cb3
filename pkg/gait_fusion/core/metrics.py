"""Classification metrics for ordinal GMFCS predictions.

Class labels are 0-based indices here; reports translate them to GMFCS levels.
"""

from collections import defaultdict
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd
import sklearn.metrics

from ..constants import CONFUSION_FILE, EVAL_REPORT_FILE, NUM_CLASSES, PREDICTIONS_FILE
from ..exceptions import ContractError
from ..models.report import EvalReport
from ..utils.json_utils import JSONProcessor
from ..utils.logger import setup_logger
from .pose_data import majority_label

logger = setup_logger(__name__)


def _as_confusion(confusion) -> np.ndarray:
    matrix = np.asarray(confusion, dtype=np.float64)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1] or matrix.sum() <= 0:
        raise ContractError("metrics need a nonempty square confusion matrix")
    return matrix


def confusion_matrix(truth: Sequence[int], pred: Sequence[int], num_classes: int = NUM_CLASSES) -> np.ndarray:
    """K x K counts, rows truth and columns prediction."""
    truth = np.asarray(truth, dtype=np.int64)
    pred = np.asarray(pred, dtype=np.int64)
    if truth.shape != pred.shape:
        raise ContractError(f"truth and prediction lengths differ: {truth.size} vs {pred.size}")
    for values in (truth, pred):
        if values.size and (values.min() < 0 or values.max() >= num_classes):
            raise ContractError(f"class labels must lie in [0, {num_classes})")
    if truth.size == 0:
        return np.zeros((num_classes, num_classes), dtype=np.int64)
    return sklearn.metrics.confusion_matrix(truth, pred, labels=list(range(num_classes))).astype(np.int64)


def accuracy(confusion) -> float:
    matrix = _as_confusion(confusion)
    return float(np.trace(matrix) / matrix.sum())


def weighted_f1(confusion) -> float:
    """Support-weighted mean of per-class F1 (0 where precision + recall = 0)."""
    matrix = _as_confusion(confusion)
    tp = np.diag(matrix)
    support = matrix.sum(axis=1)
    predicted = matrix.sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        precision = np.where(predicted > 0, tp / predicted, 0.0)
        recall = np.where(support > 0, tp / support, 0.0)
        f1 = np.where(precision + recall > 0, 2 * precision * recall / (precision + recall), 0.0)
    return float((f1 * support).sum() / support.sum())


def linear_kappa(confusion) -> float:
    """Cohen's kappa with penalties |i - j| / (K - 1)."""
    matrix = _as_confusion(confusion)
    k = matrix.shape[0]
    observed = matrix / matrix.sum()
    expected = np.outer(observed.sum(axis=1), observed.sum(axis=0))
    idx = np.arange(k)
    weights = np.abs(idx[:, None] - idx[None, :]) / max(k - 1, 1)
    observed_disagreement = float((weights * observed).sum())
    expected_disagreement = float((weights * expected).sum())
    if expected_disagreement == 0.0:
        if observed_disagreement == 0.0:
            return 1.0
        raise ContractError("kappa undefined: zero expected disagreement")
    return 1.0 - observed_disagreement / expected_disagreement


def per_class_recall(confusion) -> List[Optional[float]]:
    """Diagonal over row sums; None marks a class without samples."""
    matrix = _as_confusion(confusion)
    support = matrix.sum(axis=1)
    return [float(matrix[i, i] / support[i]) if support[i] > 0 else None for i in range(matrix.shape[0])]


def _check_scores(scores: np.ndarray, truth: np.ndarray) -> None:
    if scores.ndim != 2 or scores.shape[0] != truth.size:
        raise ContractError(f"scores must be N x K for {truth.size} samples, got {scores.shape}")
    if scores.size and np.max(np.abs(scores.sum(axis=1) - 1.0)) > 1e-6:
        raise ContractError("score rows must sum to 1")


def roc_auc_ovr(scores, truth: Sequence[int]) -> List[Optional[float]]:
    """One-vs-rest AUC per class; None when a class has no positives or no negatives."""
    scores = np.asarray(scores, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.int64)
    _check_scores(scores, truth)
    aucs: List[Optional[float]] = []
    for k in range(scores.shape[1]):
        positives = truth == k
        if positives.all() or not positives.any():
            aucs.append(None)
            continue
        aucs.append(float(sklearn.metrics.roc_auc_score(positives, scores[:, k])))
    return aucs


def roc_points(scores, truth: Sequence[int], class_index: int) -> Optional[pd.DataFrame]:
    """(threshold, tpr, fpr) rows for one class, thresholds decreasing."""
    scores = np.asarray(scores, dtype=np.float64)
    positives = np.asarray(truth) == class_index
    if positives.all() or not positives.any():
        return None
    fpr, tpr, thresholds = sklearn.metrics.roc_curve(positives, scores[:, class_index], drop_intermediate=False)
    return pd.DataFrame({"threshold": thresholds, "tpr": tpr, "fpr": fpr})


def row_normalized_percent(confusion) -> np.ndarray:
    """Rows scaled to 100; empty rows stay zero."""
    matrix = np.asarray(confusion, dtype=np.float64)
    totals = matrix.sum(axis=1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(totals > 0, matrix / totals * 100.0, 0.0)


def patient_majority_accuracy(patient_ids: Sequence[str], truth: Sequence[int], pred: Sequence[int]) -> float:
    """Accuracy after a per-patient majority vote over clip predictions (lowest class on ties)."""
    votes: Dict[str, List[int]] = defaultdict(list)
    labels: Dict[str, List[int]] = defaultdict(list)
    for patient_id, t, p in zip(patient_ids, truth, pred):
        votes[patient_id].append(int(p))
        labels[patient_id].append(int(t))
    if not votes:
        raise ContractError("patient vote over an empty set")
    hits = [majority_label(votes[pid]) == majority_label(labels[pid]) for pid in votes]
    return float(np.mean(hits))


def evaluate(truth: Sequence[int], pred: Sequence[int], probabilities, num_classes: int = NUM_CLASSES,
             patient_ids: Optional[Sequence[str]] = None, name: str = "model", feature_set: Optional[str] = None,
             fusion: Optional[str] = None, stream: Optional[str] = None) -> EvalReport:
    """Full clip-level metric suite."""
    confusion = confusion_matrix(truth, pred, num_classes)
    report = EvalReport(
        name=name,
        num_classes=num_classes,
        confusion=confusion.tolist(),
        accuracy=accuracy(confusion),
        weighted_f1=weighted_f1(confusion),
        linear_kappa=linear_kappa(confusion),
        per_class_recall=per_class_recall(confusion),
        per_class_auc=roc_auc_ovr(probabilities, truth),
        support=confusion.sum(axis=1).tolist(),
        patient_accuracy=None if patient_ids is None else patient_majority_accuracy(patient_ids, truth, pred),
        feature_set=feature_set,
        fusion=fusion,
        stream=stream,
    )
    logger.info(
        f"{name}: accuracy {report.accuracy:.4f}, weighted F1 {report.weighted_f1:.4f}, "
        f"linear kappa {report.linear_kappa:.4f}"
    )
    return report


def level_columns(num_classes: int) -> List[str]:
    return [f"GMFCS_{i + 1}" for i in range(num_classes)]


def write_eval_outputs(report: EvalReport, out_dir: Union[str, Path], probabilities=None,
                       truth: Optional[Sequence[int]] = None, predictions: Optional[pd.DataFrame] = None) -> List[Path]:
    """Report JSON, confusion CSV, per-class ROC point CSVs and optional predictions."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = [JSONProcessor.write_json(report.model_dump(mode="json"), out / EVAL_REPORT_FILE)]

    columns = level_columns(report.num_classes)
    confusion = pd.DataFrame(report.confusion, index=columns, columns=columns)
    confusion.index.name = "truth"
    confusion.to_csv(out / CONFUSION_FILE)
    written.append(out / CONFUSION_FILE)

    if probabilities is not None and truth is not None:
        for k in range(report.num_classes):
            points = roc_points(probabilities, truth, k)
            if points is None:
                continue
            target = out / f"roc_gmfcs_{k + 1}.csv"
            points.to_csv(target, index=False, float_format="%.8g")
            written.append(target)
    if predictions is not None:
        predictions.to_csv(out / PREDICTIONS_FILE, index=False, float_format="%.8g")
        written.append(out / PREDICTIONS_FILE)
    return written
