"""
Agents Package
Contains the training, evaluation, cross-validation and retrieval agents that drive the pipeline stages.
"""

import sys
import os
sys.path.append(os.path.join(os.path.dirname(__file__), '..', '..'))

from src.agents.training_agent import OptimizerState, TrainConfig, TrainingAgent, fine_tune, sgd_step, train
from src.agents.crossval_agent import CrossValidationAgent, CrossValResult, FoldOutcome, summarize_folds
from src.agents.evaluation_agent import (
    EvaluationAgent,
    MetricsReport,
    confusion_matrix,
    label_prf,
    mean_average_precision,
    topk_accuracy,
)
from src.agents.retrieval_agent import FeatureIndex, RetrievalAgent, extract_features, knn_retrieve, match_flag

__all__ = [
    'OptimizerState',
    'TrainConfig',
    'TrainingAgent',
    'fine_tune',
    'sgd_step',
    'train',
    'CrossValidationAgent',
    'CrossValResult',
    'FoldOutcome',
    'summarize_folds',
    'EvaluationAgent',
    'MetricsReport',
    'confusion_matrix',
    'label_prf',
    'mean_average_precision',
    'topk_accuracy',
    'FeatureIndex',
    'RetrievalAgent',
    'extract_features',
    'knn_retrieve',
    'match_flag',
]
