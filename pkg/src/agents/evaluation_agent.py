"""
Evaluation agent.
Top-k accuracy, instance-wise mean average precision, row-normalized confusion matrix,
label-based precision/recall/F1 with macro averages, and the report that bundles them.
"""

import json
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
from sklearn.metrics import confusion_matrix as confusion_counts

from src.exceptions import BadArgumentError
from src.numerics.network import Network
from src.processors.heads import MULTI_CLASS, MULTI_LABEL, activate, predict_labels, topk_matrix
from src.processors.thresholds import ThresholdModel, apply_threshold, multilabel_accuracy

logger = logging.getLogger(__name__)

PREDICT_BATCH = 64


def network_confidences(net: Network, images, head: str) -> np.ndarray:
    """Confidence vectors (softmax or sigmoid of the logits) for N×C×H×W images."""
    images = np.asarray(images, dtype=np.float64)
    logits = np.concatenate([
        net.forward(images[start:start + PREDICT_BATCH], cache=False).data
        for start in range(0, images.shape[0], PREDICT_BATCH)
    ])
    return activate(head, logits)


def _as_confs(confs) -> np.ndarray:
    confs = np.asarray(confs, dtype=np.float64)
    if confs.ndim != 2 or confs.shape[0] == 0:
        raise BadArgumentError(f"Expected a nonempty N×Q confidence matrix, got shape {confs.shape}")
    return confs


def _as_indices(labels, count: int, num_labels: int, what: str = "label") -> np.ndarray:
    labels = np.asarray(labels)
    if labels.shape != (count,):
        raise BadArgumentError(f"Expected {count} {what} indices, got shape {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= num_labels):
        raise BadArgumentError(f"{what.capitalize()} indices must lie in [0, {num_labels})")
    return labels.astype(np.int64)


def to_label_matrix(labels, shape) -> np.ndarray:
    """Binary N×Q matrix from class indices (one-hot) or label vectors."""
    labels = np.asarray(labels)
    count, num_labels = shape
    if labels.ndim == 1:
        indices = _as_indices(labels, count, num_labels)
        matrix = np.zeros(shape, dtype=np.int8)
        matrix[np.arange(count), indices] = 1
        return matrix
    if labels.shape != tuple(shape):
        raise BadArgumentError(f"Label vectors have shape {labels.shape}, confidences {tuple(shape)}")
    if not np.all((labels == 0) | (labels == 1)):
        raise BadArgumentError("Label vectors must be binary")
    return labels.astype(np.int8)


def topk_accuracy(confs, labels, k: int) -> float:
    """
    Fraction of instances whose true class is among the k most confident labels.

    Args:
        confs: N×Q confidences
        labels: N class indices
        k (int): 1 <= k <= Q

    Returns:
        float: Accuracy in [0, 1]
    """
    confs = _as_confs(confs)
    labels = _as_indices(labels, confs.shape[0], confs.shape[1])
    top = topk_matrix(confs, k)
    return float((top == labels[:, None]).any(axis=1).mean())


def average_precision(conf, positives) -> float:
    """AP of one ranked label list; ties in confidence keep ascending label order."""
    order = np.argsort(-np.asarray(conf, dtype=np.float64), kind="stable")
    relevant = np.asarray(positives, dtype=bool)[order]
    hits = np.cumsum(relevant)
    ranks = np.arange(1, relevant.size + 1)
    return float((hits[relevant] / ranks[relevant]).sum() / relevant.sum())


def mean_average_precision(confs, labels, ids: Optional[Sequence[str]] = None) -> float:
    """
    Mean over instances of the average precision of their ranked label lists.

    Args:
        confs: N×Q confidences
        labels: N class indices (treated as one-hot) or N×Q binary label vectors
        ids (sequence, optional): Instance identifiers used in error messages

    Returns:
        float: MAP in [0, 1]
    """
    confs = _as_confs(confs)
    truth = to_label_matrix(labels, confs.shape)
    empty = np.flatnonzero(truth.sum(axis=1) == 0)
    if empty.size:
        first = ids[empty[0]] if ids is not None else int(empty[0])
        raise BadArgumentError(f"Instance {first} has no positive labels; average precision is undefined")
    return float(np.mean([average_precision(confs[n], truth[n]) for n in range(confs.shape[0])]))


def confusion_matrix(preds, labels, num_classes: int) -> np.ndarray:
    """
    Row-normalized confusion matrix: M[i, j] = #{truth i, predicted j} / #{truth i}.
    Rows of classes without test instances stay zero.

    Args:
        preds: N predicted class indices
        labels: N true class indices
        num_classes (int): Q

    Returns:
        np.ndarray: Q×Q matrix
    """
    preds, labels = np.asarray(preds), np.asarray(labels)
    if preds.ndim != 1 or preds.shape != labels.shape or preds.size == 0:
        raise BadArgumentError(f"Predictions {preds.shape} and labels {labels.shape} must be matching nonempty vectors")
    preds = _as_indices(preds, preds.size, num_classes, "prediction")
    labels = _as_indices(labels, labels.size, num_classes)
    counts = confusion_counts(labels, preds, labels=np.arange(num_classes)).astype(np.float64)
    totals = counts.sum(axis=1, keepdims=True)
    matrix = np.divide(counts, totals, out=np.zeros_like(counts), where=totals > 0)
    empty = empty_rows(labels, num_classes)
    if empty:
        logger.warning(f"Confusion rows without test instances: {empty}")
    return matrix


def empty_rows(labels, num_classes: int) -> List[int]:
    present = np.bincount(np.asarray(labels, dtype=np.int64), minlength=num_classes)
    return [int(i) for i in np.flatnonzero(present == 0)]


@dataclass
class PRF:
    """
    Label-based precision, recall and F1.

    Attributes:
        precision, recall, f1 (np.ndarray): Per-label values
        present (np.ndarray): Labels occurring in truth or prediction; only these enter the macro means
    """
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    present: np.ndarray

    def _macro(self, values: np.ndarray) -> float:
        return float(values[self.present].mean()) if self.present.any() else 0.0

    @property
    def macro_precision(self) -> float:
        return self._macro(self.precision)

    @property
    def macro_recall(self) -> float:
        return self._macro(self.recall)

    @property
    def macro_f1(self) -> float:
        return self._macro(self.f1)


def label_prf(preds, labels) -> PRF:
    """
    P_i = |Y_i ∩ Z_i| / |Z_i|, R_i = |Y_i ∩ Z_i| / |Y_i|, F_i = 2|Y_i ∩ Z_i| / (|Y_i| + |Z_i|),
    where Y_i holds the instances whose truth contains label i and Z_i those whose prediction does.
    Empty denominators give 0.

    Args:
        preds: N×Q binary prediction vectors
        labels: N×Q binary label vectors

    Returns:
        PRF: Per-label scores and macro averages
    """
    preds = np.asarray(preds)
    labels = np.asarray(labels)
    if preds.shape != labels.shape or preds.ndim != 2:
        raise BadArgumentError(f"Prediction shape {preds.shape} does not match labels {labels.shape}")
    predicted = (preds == 1)
    actual = (labels == 1)
    both = (predicted & actual).sum(axis=0).astype(np.float64)
    z_size = predicted.sum(axis=0).astype(np.float64)
    y_size = actual.sum(axis=0).astype(np.float64)

    def ratio(numerator, denominator):
        return np.divide(numerator, denominator, out=np.zeros_like(numerator), where=denominator > 0)

    return PRF(ratio(both, z_size), ratio(both, y_size), ratio(2.0 * both, y_size + z_size), (y_size + z_size) > 0)


@dataclass
class MetricsReport:
    """
    Evaluation results for one head on one test set.

    Attributes:
        head (str): multi-class or multi-label
        label_names (list): Ordered labels Q
        num_instances (int): Test set size
        topk (dict): k -> top-k accuracy (multi-class)
        map_score (float): Mean average precision
        confusion (np.ndarray, optional): Q×Q row-normalized matrix (multi-class)
        empty_rows (list): Confusion rows whose class had no test instance
        prf (PRF): Label-based precision/recall/F1
        label_accuracy (float, optional): Fraction of correct label indicators (multi-label)
    """
    head: str
    label_names: List[str]
    num_instances: int
    map_score: float
    prf: PRF
    topk: Dict[int, float] = field(default_factory=dict)
    confusion: Optional[np.ndarray] = None
    empty_rows: List[int] = field(default_factory=list)
    label_accuracy: Optional[float] = None

    def to_dict(self) -> Dict:
        values = {
            "head": self.head,
            "instances": self.num_instances,
            "map": self.map_score,
            "macro_precision": self.prf.macro_precision,
            "macro_recall": self.prf.macro_recall,
            "macro_f1": self.prf.macro_f1,
            "per_label": {
                name: {"precision": float(p), "recall": float(r), "f1": float(f)}
                for name, p, r, f in zip(self.label_names, self.prf.precision, self.prf.recall, self.prf.f1)
            },
        }
        for k, accuracy in sorted(self.topk.items()):
            values[f"top{k}_accuracy"] = accuracy
        if self.label_accuracy is not None:
            values["label_accuracy"] = self.label_accuracy
        if self.confusion is not None:
            values["confusion"] = self.confusion.tolist()
            values["empty_rows"] = list(self.empty_rows)
        return values

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_text(self) -> str:
        """Key/value lines, a per-label table, then the confusion matrix block."""
        lines = [f"head: {self.head}", f"instances: {self.num_instances}"]
        for k, accuracy in sorted(self.topk.items()):
            lines.append(f"top{k}_accuracy: {accuracy:.6f}")
        lines.append(f"map: {self.map_score:.6f}")
        if self.label_accuracy is not None:
            lines.append(f"label_accuracy: {self.label_accuracy:.6f}")
        lines += [
            f"macro_precision: {self.prf.macro_precision:.6f}",
            f"macro_recall: {self.prf.macro_recall:.6f}",
            f"macro_f1: {self.prf.macro_f1:.6f}",
            "[per_label]",
            "label\tprecision\trecall\tf1",
        ]
        for name, p, r, f in zip(self.label_names, self.prf.precision, self.prf.recall, self.prf.f1):
            lines.append(f"{name}\t{p:.6f}\t{r:.6f}\t{f:.6f}")
        if self.confusion is not None:
            lines.append("[confusion]")
            if self.empty_rows:
                lines.append(f"# rows without test instances: {','.join(map(str, self.empty_rows))}")
            for row in self.confusion:
                lines.append("\t".join(f"{value:.6f}" for value in row))
        return "\n".join(lines) + "\n"

    def save(self, path: str):
        with open(path, "w") as f:
            f.write(self.to_text())

    def export_confusion_grid(self, path: str):
        """Headerless comma-separated grid for plotting."""
        if self.confusion is None:
            raise BadArgumentError("Only multi-class reports carry a confusion matrix")
        pd.DataFrame(self.confusion).to_csv(path, header=False, index=False, float_format="%.12g",
                                            lineterminator="\n")


class EvaluationAgent:
    """
    Turns network confidences on a test set into a MetricsReport.
    """

    def __init__(self, label_names: Sequence[str], top_k: Sequence[int] = (1, 5)):
        """
        Initialize the evaluation agent.

        Args:
            label_names (sequence): Ordered labels the confidences refer to
            top_k (sequence): k values for top-k accuracy; each must satisfy 1 <= k <= Q
        """
        self.label_names = list(label_names)
        self.top_k = sorted(set(int(k) for k in top_k))
        num_labels = len(self.label_names)
        bad = [k for k in self.top_k if not 1 <= k <= num_labels]
        if bad:
            raise BadArgumentError(f"top-k values {bad} fall outside [1, {num_labels}]")

    def evaluate_multiclass(self, confs, labels, ids: Optional[Sequence[str]] = None) -> MetricsReport:
        confs = _as_confs(confs)
        num_labels = len(self.label_names)
        if confs.shape[1] != num_labels:
            raise BadArgumentError(f"Confidences have {confs.shape[1]} columns, expected {num_labels}")
        labels = _as_indices(labels, confs.shape[0], num_labels)
        preds = predict_labels(confs)
        report = MetricsReport(
            head=MULTI_CLASS,
            label_names=self.label_names,
            num_instances=confs.shape[0],
            map_score=mean_average_precision(confs, labels, ids),
            prf=label_prf(to_label_matrix(preds, confs.shape), to_label_matrix(labels, confs.shape)),
            topk={k: topk_accuracy(confs, labels, k) for k in self.top_k},
            confusion=confusion_matrix(preds, labels, num_labels),
            empty_rows=empty_rows(labels, num_labels),
        )
        logger.info(f"Evaluated {report.num_instances} instances: "
                    + ", ".join(f"top-{k} {v:.4f}" for k, v in report.topk.items())
                    + f", MAP {report.map_score:.4f}")
        return report

    def evaluate_multilabel(self, confs, labels, threshold: ThresholdModel,
                            ids: Optional[Sequence[str]] = None) -> MetricsReport:
        confs = _as_confs(confs)
        if confs.shape[1] != len(self.label_names):
            raise BadArgumentError(f"Confidences have {confs.shape[1]} columns, expected {len(self.label_names)}")
        labels = to_label_matrix(labels, confs.shape)
        preds = apply_threshold(confs, threshold)
        report = MetricsReport(
            head=MULTI_LABEL,
            label_names=self.label_names,
            num_instances=confs.shape[0],
            map_score=mean_average_precision(confs, labels, ids),
            prf=label_prf(preds, labels),
            label_accuracy=multilabel_accuracy(preds, labels),
        )
        logger.info(f"Evaluated {report.num_instances} instances: MAP {report.map_score:.4f}, "
                    f"macro-F {report.prf.macro_f1:.4f}")
        return report
