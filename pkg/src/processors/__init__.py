"""
Processors Package
Contains the classification heads, threshold calibration, taxonomy reconciliation and image decoding.
"""

import sys
import os
sys.path.append(os.path.join(os.path.dirname(__file__), '..', '..'))

from src.processors.heads import (
    HEADS,
    MULTI_CLASS,
    MULTI_LABEL,
    activate,
    loss_and_grad,
    predict_labels,
    predict_topk,
    sigmoid_activation,
    sigmoid_ce_loss,
    softmax_activation,
    softmax_loss,
)
from src.processors.thresholds import ThresholdModel, apply_threshold, calibrate_threshold, multilabel_accuracy
from src.processors.taxonomy_processor import LabelEntry, MergeTable, TaxonomyProcessor, similarity
from src.processors.image_processor import ImageProcessor

__all__ = [
    'HEADS',
    'MULTI_CLASS',
    'MULTI_LABEL',
    'activate',
    'loss_and_grad',
    'predict_labels',
    'predict_topk',
    'sigmoid_activation',
    'sigmoid_ce_loss',
    'softmax_activation',
    'softmax_loss',
    'ThresholdModel',
    'apply_threshold',
    'calibrate_threshold',
    'multilabel_accuracy',
    'LabelEntry',
    'MergeTable',
    'TaxonomyProcessor',
    'similarity',
    'ImageProcessor',
]
