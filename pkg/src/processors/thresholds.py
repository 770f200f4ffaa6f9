"""
Threshold function for the multi-label head.
A linear function of the confidence vector decides which tags are predicted;
calibration fits it on the training set.
"""

import logging
from dataclasses import dataclass
from typing import Dict, Tuple

import numpy as np
from scipy.linalg import lstsq

from src.exceptions import BadArgumentError

logger = logging.getLogger(__name__)

LINEAR = "linear"
CONSTANT = "constant"


@dataclass(frozen=True)
class ThresholdModel:
    """
    t(X) = weights · C(X) + bias

    Attributes:
        weights (np.ndarray): Q coefficients
        bias (float): Offset
        method (str): "linear" for a fitted model, "constant" when weights are all zero by fallback
    """
    weights: np.ndarray
    bias: float
    method: str = LINEAR

    def __post_init__(self):
        weights = np.asarray(self.weights, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(weights)) or not np.isfinite(self.bias):
            raise BadArgumentError("Threshold model coefficients must be finite")
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "bias", float(self.bias))

    @classmethod
    def constant(cls, value: float, num_labels: int) -> "ThresholdModel":
        return cls(np.zeros(num_labels), value, CONSTANT)

    @property
    def num_labels(self) -> int:
        return int(self.weights.size)

    def evaluate(self, confs) -> np.ndarray:
        """Threshold value for each row of an N×Q (or single Q) confidence array."""
        confs = np.asarray(confs, dtype=np.float64)
        if confs.shape[-1] != self.num_labels:
            raise BadArgumentError(
                f"Confidence vectors have {confs.shape[-1]} entries, threshold model expects {self.num_labels}"
            )
        return confs @ self.weights + self.bias

    def to_arrays(self) -> Dict[str, np.ndarray]:
        return {"threshold.weights": self.weights.copy(), "threshold.bias": np.array([self.bias])}

    @classmethod
    def from_arrays(cls, arrays: Dict[str, np.ndarray], method: str = LINEAR) -> "ThresholdModel":
        return cls(arrays["threshold.weights"], float(np.asarray(arrays["threshold.bias"]).reshape(-1)[0]), method)


def apply_threshold(conf, model: ThresholdModel) -> np.ndarray:
    """
    Predict the tags whose confidence strictly exceeds t(X).

    Args:
        conf: A confidence vector (Q) or a batch of them (N×Q)
        model (ThresholdModel): Threshold function

    Returns:
        np.ndarray: Binary prediction vector(s) of the same shape, dtype int8
    """
    conf = np.asarray(conf, dtype=np.float64)
    thresholds = model.evaluate(conf)
    if conf.ndim == 1:
        return (conf > thresholds).astype(np.int8)
    return (conf > thresholds[:, None]).astype(np.int8)


def multilabel_accuracy(preds, labels) -> float:
    """Fraction of label indicators predicted correctly."""
    preds = np.asarray(preds)
    labels = np.asarray(labels)
    if preds.shape != labels.shape:
        raise BadArgumentError(f"Prediction shape {preds.shape} does not match labels {labels.shape}")
    return float((preds == labels).mean())


def _interval_errors(confs: np.ndarray, labels: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Candidate threshold intervals and the label mismatches each one produces.
    Interval i is [bounds[i], bounds[i+1]); any t inside predicts exactly the confidences above bounds[i].
    """
    bounds = np.unique(np.concatenate(([0.0], confs.ravel(), [1.0])))
    if bounds.size < 2:
        bounds = np.array([bounds[0], bounds[0] + 1.0])
    lower = bounds[:-1]
    positive = labels.ravel() == 1
    values = confs.ravel()
    pos_values = np.sort(values[positive])
    neg_values = np.sort(values[~positive])
    # positives at or below the lower bound are missed, negatives above it are false hits
    missed = np.searchsorted(pos_values, lower, side="right")
    false_hits = neg_values.size - np.searchsorted(neg_values, lower, side="right")
    return bounds, missed + false_hits


def optimal_scalar_threshold(confs, labels) -> float:
    """
    Scalar threshold minimizing label mismatches over the given confidences.

    The midpoint of the widest zero-error interval is returned; when no interval is
    error-free, the midpoint of the lowest minimal-error interval.
    """
    confs = np.asarray(confs, dtype=np.float64)
    labels = np.asarray(labels)
    bounds, errors = _interval_errors(confs, labels)
    best = errors.min()
    candidates = np.flatnonzero(errors == best)
    if best == 0:
        widths = bounds[candidates + 1] - bounds[candidates]
        chosen = candidates[int(np.argmax(widths))]
    else:
        chosen = candidates[0]
    return float((bounds[chosen] + bounds[chosen + 1]) / 2.0)


def _correct_labels(confs: np.ndarray, labels: np.ndarray, model: ThresholdModel) -> int:
    return int((apply_threshold(confs, model) == labels).sum())


def calibrate_threshold(train_confs, train_labels) -> ThresholdModel:
    """
    Fit t(X) = w · C + b on training confidences.

    Stage one finds, per instance, the scalar threshold that best separates its own
    positives from its negatives. Stage two regresses those targets on the confidence
    vectors by least squares. The fitted model is kept only if it labels at least as
    many training indicators correctly as the best constant threshold.

    Args:
        train_confs: M×Q confidence vectors
        train_labels: M×Q binary label vectors

    Returns:
        ThresholdModel: The calibrated threshold function
    """
    confs = np.asarray(train_confs, dtype=np.float64)
    labels = np.asarray(train_labels)
    if confs.ndim != 2 or confs.shape != labels.shape:
        raise BadArgumentError(
            f"Calibration needs matching M×Q confidences and labels, got {confs.shape} and {labels.shape}"
        )
    if not np.all((labels == 0) | (labels == 1)):
        raise BadArgumentError("Label vectors must be binary")
    num_instances, num_labels = confs.shape
    if num_instances == 0:
        raise BadArgumentError("Calibration needs at least one training instance")

    best_constant = ThresholdModel.constant(optimal_scalar_threshold(confs, labels), num_labels)

    if labels.all() or not labels.any():
        logger.warning(f"All training labels share one value; falling back to constant threshold {best_constant.bias:.6f}")
        return best_constant

    targets = np.array([optimal_scalar_threshold(confs[n], labels[n]) for n in range(num_instances)])
    design = np.hstack([confs, np.ones((num_instances, 1))])
    solution, _, rank, _ = lstsq(design, targets)
    if rank < num_labels + 1 or not np.all(np.isfinite(solution)):
        logger.warning(f"Degenerate least-squares system (rank {rank} of {num_labels + 1}); "
                       f"falling back to constant threshold {best_constant.bias:.6f}")
        return best_constant

    fitted = ThresholdModel(solution[:-1], solution[-1], LINEAR)
    fitted_correct = _correct_labels(confs, labels, fitted)
    constant_correct = _correct_labels(confs, labels, best_constant)
    if fitted_correct < constant_correct:
        logger.info(f"Constant threshold beats the linear fit on training labels "
                    f"({constant_correct} vs {fitted_correct} correct)")
        return best_constant
    logger.info(f"Calibrated linear threshold: {fitted_correct} of {labels.size} training labels correct")
    return fitted
