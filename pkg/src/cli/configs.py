"""
Run configurations for the CLI subcommands.
Values resolve as model defaults < JSON config file < explicit command-line options.
"""

import json
import os
from typing import Any, Dict, List, Literal, Optional, Type, TypeVar

from pydantic import BaseModel, ConfigDict, Field, ValidationError

import config
from src.agents.training_agent import TrainConfig
from src.exceptions import BadArgumentError

RunConfigT = TypeVar("RunConfigT", bound="RunConfig")


class RunConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", allow_inf_nan=False)

    seed: int = Field(default=config.DEFAULT_SEED, ge=0)
    runs_dir: str = config.RUNS_DIR
    out_dir: Optional[str] = None


class MergeConfig(RunConfig):
    entries: str
    tags: Optional[str] = None
    threshold: float = Field(default=config.MERGE_THRESHOLD, gt=0.0, le=1.0)
    min_count: int = Field(default=config.MIN_IMAGE_COUNT, ge=1)
    tag_min_count: int = Field(default=config.MIN_IMAGE_COUNT, ge=1)
    canonical_atlas: str = config.CANONICAL_ATLAS


class IngestConfig(RunConfig):
    manifest: str
    base_dir: Optional[str] = None
    classes: Optional[str] = None
    vocabulary: Optional[str] = None
    merge_table: Optional[str] = None


class SplitConfig(RunConfig):
    bundle: str
    mode: Literal["atlas", "kfold"] = "atlas"
    train_atlases: List[str] = Field(default_factory=lambda: list(config.TRAIN_ATLASES))
    test_atlases: List[str] = Field(default_factory=lambda: list(config.TEST_ATLASES))
    k: int = Field(default=config.K_FOLDS, ge=1)


class SynthConfig(RunConfig):
    num_labels: int = Field(default=4, gt=0)
    images_per_label: int = Field(default=8, gt=0)
    multi_label: bool = False
    pattern_offset: int = Field(default=0, ge=0)
    num_images: Optional[int] = Field(default=None, gt=0)
    image_shape: List[int] = Field(default_factory=lambda: list(config.INPUT_SHAPE), min_length=3, max_length=3)
    atlas: str = "synthetic"


class FoldSelection(RunConfig):
    bundle: str
    folds: Optional[str] = None
    fold: int = Field(default=0, ge=0)


class TrainingOptions(RunConfig):
    head: Literal["multi-class", "multi-label"] = "multi-class"
    init_checkpoint: Optional[str] = None
    head_lr_multiplier: float = Field(default=config.HEAD_LR_MULTIPLIER, gt=0.0)
    batch_size: int = Field(default=config.BATCH_SIZE, gt=0)
    momentum: float = Field(default=config.MOMENTUM, ge=0.0, lt=1.0)
    weight_decay: float = Field(default=config.WEIGHT_DECAY, ge=0.0)
    learning_rate: Optional[float] = Field(default=None, gt=0.0)
    epochs: int = Field(default=config.EPOCHS, gt=0)

    def train_config(self) -> TrainConfig:
        """Scratch runs default to the scratch rate, fine-tuning runs to the fine-tuning rate."""
        rate = self.learning_rate
        if rate is None:
            rate = config.FINE_TUNE_LEARNING_RATE if self.init_checkpoint else config.SCRATCH_LEARNING_RATE
        return TrainConfig(batch_size=self.batch_size, momentum=self.momentum, weight_decay=self.weight_decay,
                           learning_rate=rate, epochs=self.epochs, seed=self.seed, head=self.head)


class TrainRunConfig(FoldSelection, TrainingOptions):
    pass


class CrossValConfig(TrainingOptions):
    bundle: str
    folds: Optional[str] = None
    k: int = Field(default=config.K_FOLDS, ge=2)
    top_k: Optional[List[int]] = None


class CalibrateConfig(FoldSelection):
    checkpoint: str


class EvalConfig(FoldSelection):
    checkpoint: str
    top_k: Optional[List[int]] = None


class RetrieveConfig(RunConfig):
    checkpoint: str
    index_bundle: str
    query_bundle: str
    k: int = Field(default=config.RETRIEVAL_K, ge=1)
    normalize: bool = False


def resolve_config(model: Type[RunConfigT], config_file: Optional[str], overrides: Dict[str, Any]) -> RunConfigT:
    """
    Build a run config from an optional JSON file and command-line overrides.

    Args:
        model (type): RunConfig subclass
        config_file (str, optional): JSON object with field values
        overrides (dict): Command-line values; None means "not given"

    Returns:
        RunConfig: Validated configuration
    """
    values: Dict[str, Any] = {}
    if config_file:
        if not os.path.exists(config_file):
            raise BadArgumentError(f"Config file '{config_file}' not found")
        with open(config_file) as f:
            try:
                loaded = json.load(f)
            except json.JSONDecodeError as e:
                raise BadArgumentError(f"Config file {config_file} is not valid JSON: {e}")
        if not isinstance(loaded, dict):
            raise BadArgumentError(f"Config file {config_file} must hold a JSON object")
        values.update(loaded)
    values.update({key: value for key, value in overrides.items() if value is not None})
    try:
        return model(**values)
    except ValidationError as e:
        problems = "; ".join(f"{'.'.join(map(str, err['loc'])) or 'config'}: {err['msg']}" for err in e.errors())
        raise BadArgumentError(f"Invalid configuration: {problems}")


def parse_list(text: Optional[str], cast=str) -> Optional[List]:
    """Comma-separated option value to a list; None stays None."""
    if text is None:
        return None
    try:
        return [cast(item.strip()) for item in text.split(",") if item.strip()]
    except ValueError:
        raise BadArgumentError(f"Could not parse list '{text}'")
