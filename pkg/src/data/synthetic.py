"""
Synthetic desk-scale data.
Every label draws on one visual primitive: a colored patch in its own grid cell
(checkered once the cells run out) plus a faint whole-image tint of the same color.
Primitives depend only on their index, so two tasks built with overlapping
primitive ranges share visual structure.
"""

import logging
from typing import List, Optional, Sequence, Tuple

import numpy as np

from src.data.data_manager import Dataset, ImageRecord
from src.exceptions import BadArgumentError

logger = logging.getLogger(__name__)

GRID = 4
PATCH_STRENGTH = 0.6
TINT_STRENGTH = 0.1
BACKGROUND = 0.2
NOISE_SCALE = 0.1
PALETTE_SEED = 7919


def class_names(num_labels: int, offset: int = 0) -> List[str]:
    return [f"class_{j + offset:02d}" for j in range(num_labels)]


def tag_names(num_labels: int, offset: int = 0) -> List[str]:
    return [f"tag_{j + offset:02d}" for j in range(num_labels)]


def primitive(index: int, image_shape: Tuple[int, int, int]) -> np.ndarray:
    """
    The C×H×W pattern for one primitive: patch plus tint, without background or noise.

    Args:
        index (int): Primitive index
        image_shape (tuple): C×H×W

    Returns:
        np.ndarray: Pattern with values in [0, PATCH_STRENGTH + TINT_STRENGTH]
    """
    channels, height, width = image_shape
    color = 0.3 + 0.7 * np.random.default_rng(PALETTE_SEED + index).random(channels)
    pattern = np.zeros(image_shape)
    pattern += TINT_STRENGTH * color[:, None, None]

    grid_h, grid_w = min(GRID, height), min(GRID, width)
    cell_h, cell_w = height // grid_h, width // grid_w
    cell = index % (grid_h * grid_w)
    top, left = (cell // grid_w) * cell_h, (cell % grid_w) * cell_w
    patch = np.ones((cell_h, cell_w))
    if (index // (grid_h * grid_w)) % 2 == 1:
        patch = (np.add.outer(np.arange(cell_h), np.arange(cell_w)) % 2).astype(np.float64)
    pattern[:, top:top + cell_h, left:left + cell_w] += PATCH_STRENGTH * color[:, None, None] * patch
    return pattern


def _render(primitives: Sequence[int], image_shape: Tuple[int, int, int], rng: np.random.Generator) -> np.ndarray:
    image = np.full(image_shape, BACKGROUND)
    for index in primitives:
        image += primitive(index, image_shape)
    image += NOISE_SCALE * rng.standard_normal(image_shape)
    return np.clip(image, 0.0, 1.0)


def synth_generate(num_labels: int, images_per_label: int, image_shape: Sequence[int] = (3, 32, 32),
                   seed: int = 0, multi_label: bool = False, pattern_offset: int = 0,
                   atlas: str = "synthetic", num_images: Optional[int] = None) -> List[ImageRecord]:
    """
    Generate label-dependent images.

    Multi-class mode yields images_per_label records per class, class-major. Multi-label
    mode yields num_labels × images_per_label records (or num_images when given), each
    carrying 1 to 3 distinct tags whose patterns are superimposed.

    Args:
        num_labels (int): Number of classes or tags
        images_per_label (int): Images per class (multi-class) or the per-tag budget (multi-label)
        image_shape (sequence): C×H×W
        seed (int): Seed for tag sampling and noise
        multi_label (bool): Generate tagged images instead of single-diagnosis ones
        pattern_offset (int): First primitive index used by label 0
        atlas (str): Atlas written on every record
        num_images (int, optional): Exact record count in multi-label mode

    Returns:
        list: ImageRecord list
    """
    image_shape = tuple(int(extent) for extent in image_shape)
    if num_labels < 1 or images_per_label < 1:
        raise BadArgumentError("Label count and images per label must be positive")
    if len(image_shape) != 3 or min(image_shape) < 1:
        raise BadArgumentError(f"Image shape must be a positive C×H×W, got {image_shape}")
    if pattern_offset < 0:
        raise BadArgumentError(f"Pattern offset must be nonnegative, got {pattern_offset}")

    rng = np.random.default_rng(seed)
    records = []
    if not multi_label:
        names = class_names(num_labels, pattern_offset)
        for label in range(num_labels):
            for _ in range(images_per_label):
                image = _render([label + pattern_offset], image_shape, rng)
                records.append(ImageRecord(f"s{len(records):05d}", atlas, image, diagnosis=names[label]))
    else:
        names = tag_names(num_labels, pattern_offset)
        total = num_images if num_images is not None else num_labels * images_per_label
        if total < 1:
            raise BadArgumentError(f"num_images must be positive, got {total}")
        max_tags = min(3, num_labels)
        for _ in range(total):
            count = int(rng.integers(1, max_tags + 1))
            chosen = sorted(int(j) for j in rng.choice(num_labels, size=count, replace=False))
            image = _render([j + pattern_offset for j in chosen], image_shape, rng)
            records.append(ImageRecord(f"s{len(records):05d}", atlas, image, tags=frozenset(names[j] for j in chosen)))

    logger.info(f"Generated {len(records)} synthetic {'multi-label' if multi_label else 'multi-class'} "
                f"records over {num_labels} labels (seed {seed}, offset {pattern_offset})")
    return records


def synth_dataset(num_labels: int, images_per_label: int, multi_label: bool = False,
                  pattern_offset: int = 0, **kwargs) -> Dataset:
    """synth_generate wrapped with its label spaces."""
    records = synth_generate(num_labels, images_per_label, multi_label=multi_label,
                             pattern_offset=pattern_offset, **kwargs)
    if multi_label:
        return Dataset(records, [], tag_names(num_labels, pattern_offset))
    return Dataset(records, class_names(num_labels, pattern_offset), [])
