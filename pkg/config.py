"""
Configuration module for the lesiontag toolkit.
Contains all configuration constants and defaults; each can be overridden by an
environment variable of the same name (or a .env file).
"""

import os
from dotenv import load_dotenv

# Load environment variables from .env file
load_dotenv()


def _list(name: str, default: str):
    return [item.strip() for item in os.getenv(name, default).split(',') if item.strip()]


# Reproducibility
DEFAULT_SEED = int(os.getenv('DEFAULT_SEED', '0'))

# Optimizer settings
MOMENTUM = float(os.getenv('MOMENTUM', '0.9'))
WEIGHT_DECAY = float(os.getenv('WEIGHT_DECAY', '5e-4'))
FINE_TUNE_LEARNING_RATE = float(os.getenv('FINE_TUNE_LEARNING_RATE', '0.01'))
SCRATCH_LEARNING_RATE = float(os.getenv('SCRATCH_LEARNING_RATE', '0.001'))
BATCH_SIZE = int(os.getenv('BATCH_SIZE', '16'))
EPOCHS = int(os.getenv('EPOCHS', '10'))
HEAD_LR_MULTIPLIER = float(os.getenv('HEAD_LR_MULTIPLIER', '10.0'))

# Taxonomy reconciliation
MERGE_THRESHOLD = float(os.getenv('MERGE_THRESHOLD', '0.8'))
MIN_IMAGE_COUNT = int(os.getenv('MIN_IMAGE_COUNT', '300'))
CANONICAL_ATLAS = os.getenv('CANONICAL_ATLAS', 'DermQuest')

# Partitioning
TRAIN_ATLASES = _list('TRAIN_ATLASES', 'AtlasDerm,Danderm,Derma,DermIS,Dermnet')
TEST_ATLASES = _list('TEST_ATLASES', 'DermQuest')
K_FOLDS = int(os.getenv('K_FOLDS', '5'))

# Evaluation and retrieval
RETRIEVAL_K = int(os.getenv('RETRIEVAL_K', '5'))
TOP_K = tuple(int(k) for k in _list('TOP_K', '1,5'))

# Network input (C×H×W)
INPUT_SHAPE = tuple(int(extent) for extent in _list('INPUT_SHAPE', '3,32,32'))

# File Paths
RUNS_DIR = os.getenv('RUNS_DIR', 'runs')

# Logging
LOG_LEVEL = os.getenv('LOG_LEVEL', 'INFO')
