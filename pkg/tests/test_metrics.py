"""
Tests for top-k accuracy, MAP, the confusion matrix, label-based P/R/F and metrics reports.
"""

import json

import numpy as np
import pytest

from src.agents.evaluation_agent import (
    EvaluationAgent,
    confusion_matrix,
    label_prf,
    mean_average_precision,
    topk_accuracy,
)
from src.exceptions import BadArgumentError
from src.processors.thresholds import ThresholdModel


def rank_of(conf, label) -> int:
    """1-based position of a label when ranking by confidence, lower index first on ties"""
    return 1 + sum(1 for j, c in enumerate(conf) if c > conf[label] or (c == conf[label] and j < label))


def brute_topk(confs, labels, k) -> float:
    return sum(rank_of(conf, y) <= k for conf, y in zip(confs, labels)) / len(labels)


def brute_ap(conf, positives) -> float:
    ranks = sorted(rank_of(conf, j) for j in positives)
    return sum((i + 1) / rank for i, rank in enumerate(ranks)) / len(ranks)


def brute_prf(preds, labels):
    precision, recall, f1 = [], [], []
    for i in range(labels.shape[1]):
        y = {n for n in range(labels.shape[0]) if labels[n, i]}
        z = {n for n in range(labels.shape[0]) if preds[n, i]}
        both = len(y & z)
        precision.append(both / len(z) if z else 0.0)
        recall.append(both / len(y) if y else 0.0)
        f1.append(2 * both / (len(y) + len(z)) if y or z else 0.0)
    return precision, recall, f1


def tied_confs(rng, shape):
    """Confidences on a coarse grid so that ties are common."""
    return np.round(rng.random(shape), 1)


def brute_confusion(preds, labels, num_classes):
    matrix = np.zeros((num_classes, num_classes))
    for truth in range(num_classes):
        members = [p for p, y in zip(preds, labels) if y == truth]
        for predicted in range(num_classes):
            matrix[truth, predicted] = sum(p == predicted for p in members) / len(members) if members else 0.0
    return matrix


def brute_macro(values, preds, labels):
    present = [i for i in range(labels.shape[1]) if labels[:, i].any() or preds[:, i].any()]
    return sum(values[i] for i in present) / len(present) if present else 0.0


def test_topk_examples():
    conf = np.array([[0.1, 0.5, 0.3, 0.1]])
    assert topk_accuracy(conf, [2], 1) == 0.0
    assert topk_accuracy(conf, [2], 2) == 1.0
    perfect = np.eye(4)
    for k in range(1, 5):
        assert topk_accuracy(perfect, [0, 1, 2, 3], k) == 1.0


def test_topk_matches_brute_force_and_is_monotone(rng):
    confs = tied_confs(rng, (1000, 6))
    labels = rng.integers(0, 6, size=1000)
    previous = 0.0
    for k in range(1, 7):
        accuracy = topk_accuracy(confs, labels, k)
        assert accuracy == pytest.approx(brute_topk(confs, labels, k), abs=1e-12)
        assert accuracy >= previous
        previous = accuracy
    assert previous == 1.0


def test_topk_rejects_bad_k_and_labels():
    confs = np.full((2, 3), 1 / 3)
    with pytest.raises(BadArgumentError):
        topk_accuracy(confs, [0, 1], 4)
    with pytest.raises(BadArgumentError):
        topk_accuracy(confs, [0, 3], 1)


def test_average_precision_example():
    assert mean_average_precision([[0.9, 0.8, 0.7, 0.1]], [[1, 0, 1, 0]]) == pytest.approx(5 / 6)


def test_perfect_ranking_has_unit_map():
    confs = np.array([[0.9, 0.1, 0.8], [0.2, 0.7, 0.6]])
    assert mean_average_precision(confs, [[1, 0, 1], [0, 1, 1]]) == 1.0


@pytest.mark.parametrize("rank", [1, 2, 3, 4])
def test_single_positive_map_is_reciprocal_rank(rank):
    conf = np.array([[0.4, 0.3, 0.2, 0.1]])
    assert mean_average_precision(conf, [rank - 1]) == pytest.approx(1 / rank)


def test_map_rejects_instance_without_positives():
    with pytest.raises(BadArgumentError, match="img-7"):
        mean_average_precision([[0.5, 0.5], [0.2, 0.8]], [[1, 0], [0, 0]], ids=["img-3", "img-7"])


def test_map_matches_brute_force(rng):
    confs = tied_confs(rng, (1000, 5))
    labels = rng.integers(0, 2, size=(1000, 5))
    labels[labels.sum(axis=1) == 0, 0] = 1
    expected = np.mean([brute_ap(c, np.flatnonzero(y)) for c, y in zip(confs, labels)])
    assert mean_average_precision(confs, labels) == pytest.approx(expected, abs=1e-12)


def test_map_is_invariant_under_monotone_transforms(rng):
    confs = tied_confs(rng, (200, 4))
    labels = rng.integers(0, 2, size=(200, 4))
    labels[:, 2] = 1
    base = mean_average_precision(confs, labels)
    assert mean_average_precision(np.exp(3 * confs), labels) == pytest.approx(base, abs=1e-12)
    assert mean_average_precision(confs ** 3 + 7, labels) == pytest.approx(base, abs=1e-12)


def test_confusion_matrix_examples():
    assert np.array_equal(confusion_matrix([0, 1, 2], [0, 1, 2], 3), np.eye(3))
    matrix = confusion_matrix([0, 1], [0, 0], 2)
    assert matrix[0].tolist() == [0.5, 0.5]
    assert matrix[1].tolist() == [0.0, 0.0]


def test_confusion_rows_sum_to_one_where_populated(rng):
    preds = rng.integers(0, 5, size=300)
    labels = rng.integers(0, 4, size=300)
    matrix = confusion_matrix(preds, labels, 5)
    assert np.allclose(matrix[:4].sum(axis=1), 1.0)
    assert np.all(matrix[4] == 0)


def test_confusion_rejects_out_of_range_indices():
    with pytest.raises(BadArgumentError):
        confusion_matrix([0, 2], [0, 1], 2)
    with pytest.raises(BadArgumentError):
        confusion_matrix([0, 1], [0, -1], 2)


def test_prf_identical_predictions():
    labels = np.array([[1, 0, 1], [0, 1, 1]])
    prf = label_prf(labels, labels)
    assert prf.precision.tolist() == [1.0, 1.0, 1.0]
    assert (prf.macro_precision, prf.macro_recall, prf.macro_f1) == (1.0, 1.0, 1.0)


def test_prf_set_counting_example():
    labels = np.array([[1], [1], [1], [1], [0]])
    preds = np.array([[1], [1], [0], [0], [0]])
    prf = label_prf(preds, labels)
    assert prf.precision[0] == 1.0
    assert prf.recall[0] == 0.5
    assert prf.f1[0] == pytest.approx(2 / 3)


def test_absent_label_is_excluded_from_macro_means():
    labels = np.array([[1, 0], [1, 0]])
    preds = np.array([[1, 0], [0, 0]])
    prf = label_prf(preds, labels)
    assert prf.precision[1] == prf.recall[1] == prf.f1[1] == 0.0
    assert prf.present.tolist() == [True, False]
    assert prf.macro_precision == 1.0
    assert prf.macro_recall == 0.5


def test_macro_means_are_zero_without_present_labels():
    prf = label_prf(np.zeros((3, 2), dtype=int), np.zeros((3, 2), dtype=int))
    assert not prf.present.any()
    assert (prf.macro_precision, prf.macro_recall, prf.macro_f1) == (0.0, 0.0, 0.0)


def test_prf_matches_brute_force(rng):
    labels = rng.integers(0, 2, size=(1000, 6))
    preds = rng.integers(0, 2, size=(1000, 6))
    preds[:, 5] = 0
    labels[:, 5] = 0
    prf = label_prf(preds, labels)
    precision, recall, f1 = brute_prf(preds, labels)
    assert prf.precision == pytest.approx(np.array(precision))
    assert prf.recall == pytest.approx(np.array(recall))
    assert prf.f1 == pytest.approx(np.array(f1))
    assert prf.macro_f1 == pytest.approx(np.mean(f1[:5]))


def test_multiclass_report(tmp_path):
    agent = EvaluationAgent(["a", "b", "c"], top_k=(1, 2))
    confs = np.array([[0.7, 0.2, 0.1], [0.1, 0.3, 0.6], [0.5, 0.4, 0.1]])
    report = agent.evaluate_multiclass(confs, [0, 1, 0])
    assert report.topk == {1: pytest.approx(2 / 3), 2: 1.0}
    assert report.empty_rows == [2]
    assert report.confusion[1].tolist() == [0.0, 0.0, 1.0]

    report.save(str(tmp_path / "metrics.txt"))
    text = (tmp_path / "metrics.txt").read_text()
    assert "top1_accuracy: 0.666667" in text
    assert "[confusion]" in text
    assert "# rows without test instances: 2" in text
    values = json.loads(report.to_json())
    assert values["top2_accuracy"] == 1.0
    assert values["per_label"]["a"]["recall"] == 1.0

    report.export_confusion_grid(str(tmp_path / "confusion.csv"))
    rows = (tmp_path / "confusion.csv").read_text().splitlines()
    assert rows[0] == "1,0,0"


def test_multilabel_report():
    agent = EvaluationAgent(["crust", "scales"], top_k=(1,))
    confs = np.array([[0.9, 0.2], [0.4, 0.8]])
    report = agent.evaluate_multilabel(confs, [[1, 0], [0, 1]], ThresholdModel.constant(0.5, 2))
    assert report.prf.macro_f1 == 1.0
    assert report.map_score == 1.0
    assert report.label_accuracy == 1.0
    assert report.confusion is None
    assert "confusion" not in report.to_dict()


def test_agent_rejects_k_beyond_label_count():
    with pytest.raises(BadArgumentError, match="outside"):
        EvaluationAgent(["a", "b"], top_k=(1, 5))


def test_small_random_instances_match_brute_force():
    rng = np.random.default_rng(2024)
    for _ in range(1000):
        n, q = int(rng.integers(1, 21)), int(rng.integers(2, 9))
        confs = tied_confs(rng, (n, q))
        classes = rng.integers(0, q, size=n)
        k = int(rng.integers(1, q + 1))
        assert topk_accuracy(confs, classes, k) == pytest.approx(brute_topk(confs, classes, k), abs=1e-12)

        predicted = rng.integers(0, q, size=n)
        assert np.allclose(confusion_matrix(predicted, classes, q), brute_confusion(predicted, classes, q),
                           rtol=0, atol=1e-12)

        labels = rng.integers(0, 2, size=(n, q))
        labels[labels.sum(axis=1) == 0, rng.integers(0, q)] = 1
        expected = np.mean([brute_ap(c, np.flatnonzero(y)) for c, y in zip(confs, labels)])
        assert mean_average_precision(confs, labels) == pytest.approx(expected, abs=1e-12)

        preds = (rng.random((n, q)) < rng.random()).astype(np.int8)
        prf = label_prf(preds, labels)
        precision, recall, f1 = brute_prf(preds, labels)
        assert np.allclose(prf.precision, precision, rtol=0, atol=1e-12)
        assert np.allclose(prf.recall, recall, rtol=0, atol=1e-12)
        assert np.allclose(prf.f1, f1, rtol=0, atol=1e-12)
        assert prf.macro_precision == pytest.approx(brute_macro(precision, preds, labels), abs=1e-12)
        assert prf.macro_recall == pytest.approx(brute_macro(recall, preds, labels), abs=1e-12)
        assert prf.macro_f1 == pytest.approx(brute_macro(f1, preds, labels), abs=1e-12)
