"""
Tests for the softmax and sigmoid heads and top-k prediction.
"""

import math

import numpy as np
import pytest

from src.exceptions import BadArgumentError
from src.processors.heads import (
    activate,
    loss_and_grad,
    predict_labels,
    predict_topk,
    sigmoid_activation,
    sigmoid_ce_loss,
    softmax_activation,
    softmax_loss,
    topk_matrix,
)


def reference_softmax_loss(logits, labels) -> float:
    """Direct evaluation in extended precision"""
    logits = np.asarray(logits, dtype=np.longdouble)
    total = np.longdouble(0)
    for row, label in zip(logits, labels):
        shifted = row - row.max()
        total += np.log(np.exp(shifted).sum()) - shifted[label]
    return float(total / len(labels))


def reference_sigmoid_ce(logits, labels) -> float:
    logits = np.asarray(logits, dtype=np.longdouble)
    labels = np.asarray(labels, dtype=np.longdouble)
    probs = 1 / (1 + np.exp(-logits))
    per_entry = -(labels * np.log(probs) + (1 - labels) * np.log1p(-probs))
    return float(per_entry.sum() / logits.shape[0])


def test_softmax_of_uniform_logits():
    assert np.allclose(softmax_activation([0, 0, 0, 0]), [0.25] * 4, rtol=0, atol=1e-15)


@pytest.mark.parametrize("offset", [-700.0, 0.0, 3.5, 900.0])
def test_softmax_of_log_three_gap(offset):
    conf = softmax_activation([offset, offset + math.log(3)])
    assert conf == pytest.approx(np.array([0.25, 0.75]), abs=1e-12)


def test_softmax_sums_to_one_and_is_shift_invariant(rng):
    logits = rng.normal(scale=20.0, size=(50, 7))
    conf = softmax_activation(logits)
    assert np.allclose(conf.sum(axis=1), 1.0, atol=1e-12)
    assert np.all(conf >= 0)
    assert np.allclose(softmax_activation(logits + 123.0), conf, atol=1e-12)


def test_softmax_rejects_non_finite_logits():
    with pytest.raises(BadArgumentError):
        softmax_activation([0.0, np.inf])


def test_softmax_loss_of_uniform_logits_is_log_q():
    for label in range(4):
        assert softmax_loss(np.zeros((1, 4)), [label]) == pytest.approx(math.log(4), abs=1e-12)


def test_softmax_loss_vanishes_for_confident_truth():
    assert softmax_loss(np.array([[60.0, 0.0, 0.0]]), [0]) < 1e-20


def test_softmax_loss_matches_extended_precision(rng):
    logits = rng.normal(scale=5.0, size=(40, 6))
    labels = rng.integers(0, 6, size=40)
    assert softmax_loss(logits, labels) == pytest.approx(reference_softmax_loss(logits, labels), rel=1e-12)


def test_softmax_loss_rejects_out_of_range_label():
    with pytest.raises(BadArgumentError):
        softmax_loss(np.zeros((2, 3)), [0, 3])
    with pytest.raises(BadArgumentError):
        softmax_loss(np.zeros((2, 3)), [0, -1])
    with pytest.raises(BadArgumentError):
        softmax_loss(np.zeros((2, 3)), [0.5, 1])


def test_softmax_gradient_rows_sum_to_zero(rng):
    _, grad = loss_and_grad("multi-class", rng.standard_normal((5, 4)), [0, 1, 2, 3, 0])
    assert np.allclose(grad.sum(axis=1), 0.0, atol=1e-15)


def test_sigmoid_examples():
    assert np.array_equal(sigmoid_activation([0.0, 0.0]), [0.5, 0.5])
    assert sigmoid_activation([math.log(3)])[0] == pytest.approx(0.75, abs=1e-15)
    tiny = sigmoid_activation([-50.0])[0]
    assert not math.isnan(tiny)
    assert 0.0 <= tiny <= 1e-20
    assert sigmoid_activation([800.0])[0] == 1.0


def test_sigmoid_ce_of_zero_logits_is_q_log_two():
    for labels in ([0, 0, 0], [1, 0, 1], [1, 1, 1]):
        assert sigmoid_ce_loss(np.zeros((1, 3)), [labels]) == pytest.approx(3 * math.log(2), abs=1e-12)


def test_sigmoid_ce_vanishes_for_confident_positives():
    assert sigmoid_ce_loss(np.full((1, 4), 60.0), np.ones((1, 4))) < 1e-20


def test_sigmoid_ce_is_finite_for_extreme_logits():
    loss = sigmoid_ce_loss(np.array([[1000.0, -1000.0]]), [[0, 1]])
    assert loss == pytest.approx(2000.0)


def test_sigmoid_ce_matches_extended_precision(rng):
    logits = rng.normal(scale=4.0, size=(30, 5))
    labels = rng.integers(0, 2, size=(30, 5))
    assert sigmoid_ce_loss(logits, labels) == pytest.approx(reference_sigmoid_ce(logits, labels), rel=1e-9)


def test_sigmoid_ce_rejects_non_binary_labels():
    with pytest.raises(BadArgumentError):
        sigmoid_ce_loss(np.zeros((1, 2)), [[1, 2]])
    with pytest.raises(BadArgumentError):
        sigmoid_ce_loss(np.zeros((1, 2)), [[1, 0, 1]])


def test_predict_topk_examples():
    conf = [0.1, 0.5, 0.3, 0.1]
    assert predict_topk(conf, 1) == [1]
    assert predict_topk(conf, 2) == [1, 2]
    assert predict_topk(conf, 4) == [1, 2, 0, 3]
    assert predict_topk([0.4, 0.4], 1) == [0]


def test_predict_topk_rejects_k_out_of_range():
    with pytest.raises(BadArgumentError):
        predict_topk([0.5, 0.5], 3)
    with pytest.raises(BadArgumentError):
        predict_topk([0.5, 0.5], 0)


def test_topk_matrix_agrees_with_rows(rng):
    confs = softmax_activation(rng.standard_normal((20, 6)))
    top = topk_matrix(confs, 3)
    for row, conf in zip(top, confs):
        assert list(row) == predict_topk(conf, 3)
    assert np.array_equal(predict_labels(confs), top[:, 0])


def test_activate_dispatches_by_head():
    logits = np.array([[0.0, math.log(3)]])
    assert activate("multi-class", logits) == pytest.approx(np.array([[0.25, 0.75]]))
    assert activate("multi-label", logits) == pytest.approx(np.array([[0.5, 0.75]]))
    with pytest.raises(BadArgumentError):
        activate("ranking", logits)
