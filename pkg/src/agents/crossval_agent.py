"""
Cross-validation agent.
Rotates each fold out as the test set, trains on the rest, calibrates the multi-label
threshold on that fold's training confidences and evaluates on the held-out records.
"""

import json
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import pandas as pd

import config
from src.agents.evaluation_agent import EvaluationAgent, MetricsReport, network_confidences
from src.agents.training_agent import TrainConfig, TrainingAgent
from src.data.data_manager import Dataset, FoldSpec
from src.exceptions import BadArgumentError, DataError
from src.numerics.checkpoint import Checkpoint
from src.numerics.network import Network
from src.processors.heads import MULTI_CLASS
from src.processors.thresholds import ThresholdModel, calibrate_threshold

logger = logging.getLogger(__name__)

SUMMARY_ROWS = ("mean", "std")


@dataclass
class FoldOutcome:
    """
    One rotation of the cross-validation loop.

    Attributes:
        fold (int): Held-out fold index
        report (MetricsReport): Metrics on the held-out records
        losses (list): Mean training loss per epoch
        net (Network): Trained network
        threshold (ThresholdModel, optional): Threshold fitted on the training side (multi-label)
    """
    fold: int
    report: MetricsReport
    losses: List[float]
    net: Network
    threshold: Optional[ThresholdModel] = None


@dataclass
class CrossValResult:
    head: str
    outcomes: List[FoldOutcome] = field(default_factory=list)

    @property
    def reports(self) -> List[MetricsReport]:
        return [outcome.report for outcome in self.outcomes]

    def summary(self) -> pd.DataFrame:
        return summarize_folds(self.reports)

    def to_dict(self) -> Dict:
        frame = self.summary().set_index("fold")
        return {
            "head": self.head,
            "folds": [dict(outcome.report.to_dict(), fold=outcome.fold) for outcome in self.outcomes],
            **{row: {name: float(value) for name, value in frame.loc[row].items()} for row in SUMMARY_ROWS},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def fold_scalars(report: MetricsReport) -> Dict[str, float]:
    """Scalar metrics of one report: instance count, top-k, MAP, label accuracy and macro P/R/F."""
    values = report.to_dict()
    return {name: float(value) for name, value in values.items()
            if name not in ("head", "per_label", "confusion", "empty_rows")}


def summarize_folds(reports: Sequence[MetricsReport]) -> pd.DataFrame:
    """
    One row per fold plus mean and standard deviation rows.

    Args:
        reports (sequence): Per-fold reports in fold order

    Returns:
        pd.DataFrame: A fold column ("0", "1", ..., "mean", "std") followed by the scalar metrics
    """
    if not reports:
        raise BadArgumentError("Nothing to summarize: no fold reports")
    frame = pd.DataFrame([fold_scalars(report) for report in reports])
    extra = pd.DataFrame([frame.mean(), frame.std(ddof=0)])
    frame = pd.concat([frame, extra], ignore_index=True)
    frame.insert(0, "fold", [str(i) for i in range(len(reports))] + list(SUMMARY_ROWS))
    return frame


def save_summary(path: str, frame: pd.DataFrame):
    frame.to_csv(path, sep="\t", index=False, float_format="%.6f", lineterminator="\n")


class CrossValidationAgent:
    """
    Runs the train / calibrate / evaluate cycle once per fold.
    """

    def __init__(self, cfg: TrainConfig, top_k: Optional[Sequence[int]] = None,
                 init_checkpoint: Optional[Checkpoint] = None,
                 head_lr_multiplier: float = config.HEAD_LR_MULTIPLIER):
        """
        Initialize the cross-validation agent.

        Args:
            cfg (TrainConfig): Training settings shared by every fold
            top_k (sequence, optional): k values for top-k accuracy; defaults to config.TOP_K values <= Q
            init_checkpoint (Checkpoint, optional): Pretrained network to fine-tune in every fold
            head_lr_multiplier (float): Learning-rate multiplier of the new final layer when fine-tuning
        """
        self.cfg = cfg
        self.top_k = None if top_k is None else list(top_k)
        self.init_checkpoint = init_checkpoint
        self.head_lr_multiplier = head_lr_multiplier

    def _top_k(self, num_labels: int) -> List[int]:
        if self.top_k is not None:
            return self.top_k
        return [k for k in config.TOP_K if k <= num_labels]

    def run_fold(self, dataset: Dataset, folds: FoldSpec, fold: int) -> FoldOutcome:
        head = self.cfg.head
        train_records, test_records = folds.train_test(dataset.records, fold)
        if not train_records or not test_records:
            raise DataError(f"Fold {fold} leaves the {'training' if not train_records else 'test'} side empty")
        train_set = Dataset(train_records, dataset.classes, dataset.vocabulary)
        test_set = Dataset(test_records, dataset.classes, dataset.vocabulary)
        num_labels = dataset.num_labels(head)
        label_names = dataset.label_names(head)

        agent = TrainingAgent(self.cfg, dataset.image_shape)
        if self.init_checkpoint is not None:
            net = agent.fine_tune_network(self.init_checkpoint, num_labels, self.head_lr_multiplier)
        else:
            net = agent.scratch_network(num_labels)
        result = agent.run(net, train_set.images(), train_set.targets(head))

        test_confs = network_confidences(result.net, test_set.images(), head)
        if head == MULTI_CLASS:
            report = EvaluationAgent(label_names, self._top_k(num_labels)).evaluate_multiclass(
                test_confs, test_set.targets(head), test_set.ids)
            return FoldOutcome(fold, report, result.losses, result.net)

        train_confs = network_confidences(result.net, train_set.images(), head)
        threshold = calibrate_threshold(train_confs, train_set.targets(head))
        report = EvaluationAgent(label_names, ()).evaluate_multilabel(
            test_confs, test_set.targets(head), threshold, test_set.ids)
        return FoldOutcome(fold, report, result.losses, result.net, threshold)

    def run(self, dataset: Dataset, folds: FoldSpec) -> CrossValResult:
        """
        Cross-validate over every fold of the assignment.

        Args:
            dataset (Dataset): All records named by the fold assignment
            folds (FoldSpec): Fold per record

        Returns:
            CrossValResult: Per-fold outcomes in fold order
        """
        if folds.k < 2:
            raise BadArgumentError(f"Cross validation needs at least 2 folds, got {folds.k}")
        crossval = CrossValResult(self.cfg.head)
        for fold in range(folds.k):
            logger.info(f"Fold {fold + 1}/{folds.k}")
            crossval.outcomes.append(self.run_fold(dataset, folds, fold))

        frame = crossval.summary().set_index("fold")
        headline = "map" if "top1_accuracy" not in frame.columns else "top1_accuracy"
        logger.info(f"Cross validation over {folds.k} folds: {headline} "
                    f"{frame.loc['mean', headline]:.4f} ± {frame.loc['std', headline]:.4f}")
        return crossval
