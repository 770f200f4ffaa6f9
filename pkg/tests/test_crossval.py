"""
Tests for the per-fold train / calibrate / evaluate loop and its summary.
"""

import json

import numpy as np
import pytest

from src.agents.crossval_agent import CrossValidationAgent, summarize_folds
from src.agents.evaluation_agent import EvaluationAgent
from src.agents.training_agent import TrainConfig
from src.data.data_manager import FoldSpec, kfold_split
from src.data.synthetic import synth_dataset
from src.exceptions import BadArgumentError
from src.processors.thresholds import ThresholdModel

QUICK = dict(epochs=1, batch_size=4, learning_rate=0.01)


def test_multiclass_folds_cover_every_record_once():
    dataset = synth_dataset(3, 4, seed=1)
    folds = kfold_split(dataset.records, 3, seed=0)
    agent = CrossValidationAgent(TrainConfig(seed=1, **QUICK), top_k=(1, 2))
    result = agent.run(dataset, folds)

    assert [outcome.fold for outcome in result.outcomes] == [0, 1, 2]
    assert [report.num_instances for report in result.reports] == folds.fold_sizes()
    for outcome in result.outcomes:
        assert outcome.threshold is None
        assert len(outcome.losses) == 1
        assert outcome.report.topk[1] <= outcome.report.topk[2]

    frame = result.summary().set_index("fold")
    assert list(frame.index) == ["0", "1", "2", "mean", "std"]
    top1 = [report.topk[1] for report in result.reports]
    assert frame.loc["mean", "top1_accuracy"] == pytest.approx(np.mean(top1))
    assert frame.loc["std", "top1_accuracy"] == pytest.approx(np.std(top1))


def test_multi_label_folds_calibrate_on_their_training_side():
    dataset = synth_dataset(4, 4, multi_label=True, seed=2)
    folds = kfold_split(dataset.records, 2, seed=0)
    result = CrossValidationAgent(TrainConfig(seed=2, head="multi-label", **QUICK)).run(dataset, folds)

    assert len(result.outcomes) == 2
    for outcome in result.outcomes:
        assert isinstance(outcome.threshold, ThresholdModel)
        assert outcome.threshold.num_labels == 4
        assert 0.0 <= outcome.report.label_accuracy <= 1.0
    frame = result.summary()
    assert "label_accuracy" in frame.columns
    assert "top1_accuracy" not in frame.columns

    values = json.loads(result.to_json())
    assert values["head"] == "multi-label"
    assert [fold["fold"] for fold in values["folds"]] == [0, 1]
    assert values["mean"]["map"] == pytest.approx(np.mean([r.map_score for r in result.reports]))


def test_same_seed_gives_identical_fold_metrics():
    dataset = synth_dataset(3, 4, seed=1)
    folds = kfold_split(dataset.records, 2, seed=3)
    cfg = TrainConfig(seed=4, **QUICK)
    first = CrossValidationAgent(cfg, top_k=(1,)).run(dataset, folds)
    second = CrossValidationAgent(cfg, top_k=(1,)).run(dataset, folds)
    assert first.to_json() == second.to_json()


def test_a_single_fold_is_rejected():
    dataset = synth_dataset(2, 2, seed=0)
    folds = FoldSpec(dataset.ids, np.zeros(len(dataset), dtype=np.int64), 1)
    with pytest.raises(BadArgumentError, match="at least 2 folds"):
        CrossValidationAgent(TrainConfig(**QUICK)).run(dataset, folds)


def test_summary_mean_and_std_rows():
    agent = EvaluationAgent(["a", "b"], top_k=(1,))
    right = agent.evaluate_multiclass([[0.9, 0.1], [0.2, 0.8]], [0, 1])
    half = agent.evaluate_multiclass([[0.9, 0.1], [0.7, 0.3]], [0, 1])
    frame = summarize_folds([right, half]).set_index("fold")
    assert frame.loc["0", "top1_accuracy"] == 1.0
    assert frame.loc["mean", "top1_accuracy"] == pytest.approx(0.75)
    assert frame.loc["std", "top1_accuracy"] == pytest.approx(0.25)
    assert frame.loc["mean", "instances"] == 2.0

    single = summarize_folds([half]).set_index("fold")
    assert single.loc["std", "top1_accuracy"] == 0.0
    with pytest.raises(BadArgumentError):
        summarize_folds([])
