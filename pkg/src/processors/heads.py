"""
Classification heads for the two targets:
multi-class softmax for diagnosis labels and multi-label sigmoid cross-entropy for lesion tags.
All functions operate on plain float64 arrays and are safe to call concurrently.
"""

from typing import List, Tuple

import numpy as np
from scipy.special import expit, log_softmax, softmax

from src.exceptions import BadArgumentError, NumericFailureError

MULTI_CLASS = "multi-class"
MULTI_LABEL = "multi-label"
HEADS = (MULTI_CLASS, MULTI_LABEL)


def _as_logits(logits, ndim: int) -> np.ndarray:
    array = np.asarray(logits, dtype=np.float64)
    if array.ndim != ndim:
        raise BadArgumentError(f"Expected {ndim}-D logits, got shape {array.shape}")
    if not np.all(np.isfinite(array)):
        raise BadArgumentError("Logits must be finite")
    return array


def softmax_activation(logits) -> np.ndarray:
    """
    Softmax over the last axis, stabilized by max-subtraction.

    Args:
        logits: Q logits, or N×Q logits

    Returns:
        np.ndarray: Points on the probability simplex
    """
    array = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(array)):
        raise BadArgumentError("Logits must be finite")
    return softmax(array, axis=-1)


def sigmoid_activation(logits) -> np.ndarray:
    """Element-wise logistic function in its numerically stable form."""
    array = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(array)):
        raise BadArgumentError("Logits must be finite")
    return expit(array)


def _check_class_labels(labels, batch: int, num_classes: int) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.shape != (batch,):
        raise BadArgumentError(f"Expected {batch} class labels, got shape {labels.shape}")
    if not np.issubdtype(labels.dtype, np.integer):
        if not np.all(np.equal(np.mod(labels, 1), 0)):
            raise BadArgumentError("Class labels must be integers")
        labels = labels.astype(np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise BadArgumentError(f"Class labels must lie in [0, {num_classes}), got {labels.min()}..{labels.max()}")
    return labels


def _check_label_vectors(labels, shape: Tuple[int, int]) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.float64)
    if labels.shape != shape:
        raise BadArgumentError(f"Expected label vectors of shape {shape}, got {labels.shape}")
    if not np.all((labels == 0) | (labels == 1)):
        raise BadArgumentError("Label vectors must be binary")
    return labels


def softmax_loss_and_grad(batch_logits, labels) -> Tuple[float, np.ndarray]:
    """
    Mean negative log-likelihood of the true class and its gradient.

    Args:
        batch_logits: N×Q logits
        labels: N class indices in [0, Q)

    Returns:
        tuple: (loss, gradient with respect to the logits)
    """
    logits = _as_logits(batch_logits, 2)
    batch, num_classes = logits.shape
    labels = _check_class_labels(labels, batch, num_classes)
    log_probs = log_softmax(logits, axis=1)
    rows = np.arange(batch)
    loss = float(-log_probs[rows, labels].mean())
    grad = np.exp(log_probs)
    grad[rows, labels] -= 1.0
    grad /= batch
    return loss, grad


def softmax_loss(batch_logits, labels) -> float:
    return softmax_loss_and_grad(batch_logits, labels)[0]


def sigmoid_ce_loss_and_grad(batch_logits, labels) -> Tuple[float, np.ndarray]:
    """
    Sigmoid cross-entropy summed over labels and averaged over the batch.
    Evaluated in logit space as softplus(z) - y*z.

    Args:
        batch_logits: N×Q logits
        labels: N×Q binary label vectors

    Returns:
        tuple: (loss, gradient with respect to the logits)
    """
    logits = _as_logits(batch_logits, 2)
    labels = _check_label_vectors(labels, logits.shape)
    batch = logits.shape[0]
    per_entry = np.logaddexp(0.0, logits) - labels * logits
    loss = float(per_entry.sum() / batch)
    grad = (expit(logits) - labels) / batch
    return loss, grad


def sigmoid_ce_loss(batch_logits, labels) -> float:
    return sigmoid_ce_loss_and_grad(batch_logits, labels)[0]


def loss_and_grad(head: str, batch_logits, targets) -> Tuple[float, np.ndarray]:
    """Dispatch to the loss of the named head."""
    if head == MULTI_CLASS:
        loss, grad = softmax_loss_and_grad(batch_logits, targets)
    elif head == MULTI_LABEL:
        loss, grad = sigmoid_ce_loss_and_grad(batch_logits, targets)
    else:
        raise BadArgumentError(f"Unknown head '{head}', expected one of {HEADS}")
    if not np.isfinite(loss):
        raise NumericFailureError(f"{head} loss is not finite")
    return loss, grad


def activate(head: str, batch_logits) -> np.ndarray:
    """Confidence vectors for a batch of logits under the named head."""
    if head == MULTI_CLASS:
        return softmax_activation(batch_logits)
    if head == MULTI_LABEL:
        return sigmoid_activation(batch_logits)
    raise BadArgumentError(f"Unknown head '{head}', expected one of {HEADS}")


def predict_topk(conf, k: int) -> List[int]:
    """
    Indices of the k largest confidences in descending order; ties go to the lower index.

    Args:
        conf: Confidence vector of length Q
        k (int): Number of labels to return, 1 <= k <= Q

    Returns:
        list: Label indices
    """
    conf = np.asarray(conf, dtype=np.float64)
    if conf.ndim != 1:
        raise BadArgumentError(f"Expected a single confidence vector, got shape {conf.shape}")
    if not 1 <= k <= conf.size:
        raise BadArgumentError(f"k must lie in [1, {conf.size}], got {k}")
    order = np.argsort(-conf, kind="stable")
    return [int(index) for index in order[:k]]


def topk_matrix(confs, k: int) -> np.ndarray:
    """Row-wise predict_topk for an N×Q confidence matrix."""
    confs = np.asarray(confs, dtype=np.float64)
    if confs.ndim != 2:
        raise BadArgumentError(f"Expected N×Q confidences, got shape {confs.shape}")
    if not 1 <= k <= confs.shape[1]:
        raise BadArgumentError(f"k must lie in [1, {confs.shape[1]}], got {k}")
    return np.argsort(-confs, axis=1, kind="stable")[:, :k]


def predict_labels(confs) -> np.ndarray:
    """Argmax prediction per row (lowest index on ties)."""
    return topk_matrix(confs, 1)[:, 0]
