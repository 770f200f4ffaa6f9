"""
Data Management Package
Contains manifest ingestion, label encoding, partitioning and synthetic data generation.
"""

import sys
import os
sys.path.append(os.path.join(os.path.dirname(__file__), '..', '..'))

from src.data.data_manager import (
    DataManager,
    Dataset,
    FoldSpec,
    ImageRecord,
    SplitResult,
    decode_label_vector,
    encode_label_vector,
    kfold_split,
    load_bundle,
    save_bundle,
    split_by_atlas,
)
from src.data.synthetic import synth_dataset, synth_generate

__all__ = [
    'DataManager',
    'Dataset',
    'FoldSpec',
    'ImageRecord',
    'SplitResult',
    'decode_label_vector',
    'encode_label_vector',
    'kfold_split',
    'load_bundle',
    'save_bundle',
    'split_by_atlas',
    'synth_dataset',
    'synth_generate',
]
