"""
Data management module for the lesiontag toolkit.
Handles manifest ingestion, label-vector encoding, atlas and k-fold partitioning,
and dataset bundles shared by every pipeline stage.
"""

import json
import logging
import os
from collections import Counter, namedtuple
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from sklearn.model_selection import KFold

from src.exceptions import BadArgumentError, DataError, ManifestError
from src.processors.heads import HEADS, MULTI_CLASS, MULTI_LABEL
from src.processors.image_processor import ImageProcessor
from src.processors.table_reader import read_tab_rows

logger = logging.getLogger(__name__)

MANIFEST_FIELDS = ["id", "atlas", "image", "diagnosis", "tags"]
ManifestRow = namedtuple("ManifestRow", MANIFEST_FIELDS)
TAG_SEPARATOR = ";"

RECORDS_FILE = "records.tsv"
IMAGES_FILE = "images.npy"
LABELS_FILE = "labels.json"


@dataclass
class ImageRecord:
    """
    One dermatology image and its labels.

    Attributes:
        record_id (str): Unique identifier
        atlas (str): Source atlas
        image (np.ndarray): C×H×W pixels
        diagnosis (str, optional): Canonical disease label
        tags (frozenset): Canonical lesion tags
        source (str, optional): Original image reference from the manifest
    """
    record_id: str
    atlas: str
    image: np.ndarray
    diagnosis: Optional[str] = None
    tags: FrozenSet[str] = field(default_factory=frozenset)
    source: Optional[str] = None

    def __post_init__(self):
        self.tags = frozenset(self.tags)
        if not self.diagnosis and not self.tags:
            raise BadArgumentError(f"Record {self.record_id} has neither a diagnosis nor lesion tags")

    @property
    def shape(self) -> Tuple[int, ...]:
        return tuple(self.image.shape)


def _check_vocabulary(vocabulary: Sequence[str]):
    duplicates = [name for name, count in Counter(vocabulary).items() if count > 1]
    if duplicates:
        raise BadArgumentError(f"Vocabulary lists {', '.join(sorted(duplicates))} more than once")


def encode_label_vector(tags: Iterable[str], vocabulary: Sequence[str]) -> np.ndarray:
    """
    Binary label vector: bit j is set iff vocabulary[j] is among the tags.

    Args:
        tags (iterable): Tag names
        vocabulary (sequence): Ordered canonical tag list

    Returns:
        np.ndarray: Q entries of dtype int8
    """
    _check_vocabulary(vocabulary)
    tags = set(tags)
    unknown = sorted(tags.difference(vocabulary))
    if unknown:
        raise BadArgumentError(f"Tags outside the vocabulary: {', '.join(unknown)}")
    return np.array([1 if name in tags else 0 for name in vocabulary], dtype=np.int8)


def decode_label_vector(bits, vocabulary: Sequence[str]) -> FrozenSet[str]:
    bits = np.asarray(bits)
    if bits.shape != (len(vocabulary),):
        raise BadArgumentError(f"Label vector has shape {bits.shape}, vocabulary has {len(vocabulary)} tags")
    if not np.all((bits == 0) | (bits == 1)):
        raise BadArgumentError("Label vector entries must be 0 or 1")
    return frozenset(name for name, bit in zip(vocabulary, bits) if bit)


@dataclass
class Dataset:
    """
    Records plus the label spaces they are encoded against.

    Attributes:
        records (list): ImageRecord list in manifest order
        classes (list): Ordered diagnosis labels
        vocabulary (list): Ordered lesion tags
    """
    records: List[ImageRecord]
    classes: List[str] = field(default_factory=list)
    vocabulary: List[str] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    @property
    def ids(self) -> List[str]:
        return [record.record_id for record in self.records]

    @property
    def image_shape(self) -> Tuple[int, ...]:
        if not self.records:
            raise BadArgumentError("Dataset is empty")
        return self.records[0].shape

    def images(self) -> np.ndarray:
        """Stack the images into an N×C×H×W array."""
        if not self.records:
            raise BadArgumentError("Dataset is empty")
        return np.stack([record.image for record in self.records]).astype(np.float64)

    def num_labels(self, head: str) -> int:
        return len(self.classes) if head == MULTI_CLASS else len(self.vocabulary)

    def label_names(self, head: str) -> List[str]:
        return list(self.classes) if head == MULTI_CLASS else list(self.vocabulary)

    def targets(self, head: str) -> np.ndarray:
        """
        Training targets for the named head.

        Args:
            head (str): multi-class (class indices) or multi-label (N×Q label vectors)

        Returns:
            np.ndarray: Targets aligned with records
        """
        if head not in HEADS:
            raise BadArgumentError(f"Unknown head '{head}', expected one of {HEADS}")
        if head == MULTI_CLASS:
            if not self.classes:
                raise BadArgumentError("multi-class head needs diagnosis labels, dataset has none")
            index = {name: i for i, name in enumerate(self.classes)}
            missing = [r.record_id for r in self.records if r.diagnosis not in index]
            if missing:
                raise BadArgumentError(
                    f"multi-class head needs a known diagnosis on every record; {len(missing)} lack one "
                    f"(first: {missing[0]})"
                )
            return np.array([index[r.diagnosis] for r in self.records], dtype=np.int64)

        if not self.vocabulary:
            raise BadArgumentError("multi-label head needs lesion tags, dataset has none")
        untagged = [r.record_id for r in self.records if not r.tags]
        if untagged:
            raise BadArgumentError(
                f"multi-label head needs at least one tag on every record; {len(untagged)} have none "
                f"(first: {untagged[0]})"
            )
        return np.stack([encode_label_vector(r.tags, self.vocabulary) for r in self.records])

    def subset(self, ids: Iterable[str]) -> "Dataset":
        wanted = set(ids)
        return Dataset([r for r in self.records if r.record_id in wanted], list(self.classes), list(self.vocabulary))

    def tag_sets(self) -> List[FrozenSet[str]]:
        return [record.tags for record in self.records]


@dataclass
class SplitResult:
    """
    Outcome of an atlas split.

    Attributes:
        train (list): Records from training atlases
        test (list): Records from test atlases
        excluded (dict): atlas -> count of records from unlisted atlases
    """
    train: List[ImageRecord]
    test: List[ImageRecord]
    excluded: Dict[str, int] = field(default_factory=dict)

    @property
    def excluded_count(self) -> int:
        return sum(self.excluded.values())


def split_by_atlas(records: Sequence[ImageRecord], train_atlases: Iterable[str],
                   test_atlases: Iterable[str]) -> SplitResult:
    """
    Assign records to train or test by their atlas.

    Args:
        records (sequence): Records to split
        train_atlases (iterable): Atlases forming the training set
        test_atlases (iterable): Atlases forming the test set

    Returns:
        SplitResult: Train and test lists in input order, plus the excluded counts
    """
    train_atlases, test_atlases = set(train_atlases), set(test_atlases)
    overlap = train_atlases & test_atlases
    if overlap:
        raise BadArgumentError(f"Atlases {', '.join(sorted(overlap))} are listed for both train and test")
    result = SplitResult([], [])
    excluded = Counter()
    for record in records:
        if record.atlas in train_atlases:
            result.train.append(record)
        elif record.atlas in test_atlases:
            result.test.append(record)
        else:
            excluded[record.atlas] += 1
    result.excluded = dict(sorted(excluded.items()))
    if result.excluded:
        logger.warning(f"Excluded {result.excluded_count} records from unlisted atlases: {result.excluded}")
    logger.info(f"Atlas split: {len(result.train)} train, {len(result.test)} test")
    return result


@dataclass
class FoldSpec:
    """
    Fold assignment per record.

    Attributes:
        record_ids (list): Record ids in the order they were given
        assignments (np.ndarray): Fold index in [0, K) per record
        k (int): Number of folds
    """
    record_ids: List[str]
    assignments: np.ndarray
    k: int

    def fold_sizes(self) -> List[int]:
        return [int(np.sum(self.assignments == fold)) for fold in range(self.k)]

    def members(self, fold: int) -> List[str]:
        self._check_fold(fold)
        return [rid for rid, assigned in zip(self.record_ids, self.assignments) if assigned == fold]

    def train_test(self, records: Sequence[ImageRecord], fold: int) -> Tuple[List[ImageRecord], List[ImageRecord]]:
        """Rotate one fold out as the test set; the remaining folds form the training set."""
        self._check_fold(fold)
        lookup = dict(zip(self.record_ids, self.assignments))
        unknown = [r.record_id for r in records if r.record_id not in lookup]
        if unknown:
            raise DataError(f"{len(unknown)} records are not in the fold assignment (first: {unknown[0]})")
        train = [r for r in records if lookup[r.record_id] != fold]
        test = [r for r in records if lookup[r.record_id] == fold]
        return train, test

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"id": self.record_ids, "fold": self.assignments.astype(int)})

    def save(self, path: str):
        """Export as two tab-separated columns: record id, fold."""
        self.to_frame().to_csv(path, sep="\t", index=False, header=False, lineterminator="\n")

    @classmethod
    def load(cls, path: str) -> "FoldSpec":
        if not os.path.exists(path):
            raise DataError(f"Fold file '{path}' not found")
        try:
            frame = pd.read_csv(path, sep="\t", header=None, names=["id", "fold"], dtype={"id": str})
        except (pd.errors.ParserError, ValueError) as e:
            raise DataError(f"Could not parse fold file {path}: {e}")
        if frame.empty or frame["fold"].isna().any():
            raise DataError(f"Fold file {path} is empty or has missing fold indices")
        try:
            assignments = frame["fold"].to_numpy(dtype=np.int64)
        except (TypeError, ValueError):
            raise DataError(f"Fold file {path} has non-integer fold indices")
        if assignments.min() < 0:
            raise DataError(f"Fold file {path} has negative fold indices")
        return cls(frame["id"].tolist(), assignments, int(assignments.max()) + 1)

    def _check_fold(self, fold: int):
        if not 0 <= fold < self.k:
            raise BadArgumentError(f"Fold must lie in [0, {self.k}), got {fold}")


def kfold_split(records: Sequence, k: int, seed: int = 0) -> FoldSpec:
    """
    Seeded shuffle, then contiguous chunks; the first N mod K folds hold one extra record.

    Args:
        records (sequence): ImageRecords or record ids
        k (int): Number of folds, 1 <= k <= N
        seed (int): Shuffle seed

    Returns:
        FoldSpec: Deterministic fold assignment
    """
    ids = [r.record_id if isinstance(r, ImageRecord) else str(r) for r in records]
    if len(set(ids)) != len(ids):
        raise BadArgumentError("Record ids must be unique to assign folds")
    if k < 1:
        raise BadArgumentError(f"K must be a positive integer, got {k}")
    if k > len(ids):
        raise BadArgumentError(f"K={k} exceeds the record count {len(ids)}")

    assignments = np.zeros(len(ids), dtype=np.int64)
    if k > 1:
        splitter = KFold(n_splits=k, shuffle=True, random_state=seed)
        for fold, (_, test_index) in enumerate(splitter.split(np.arange(len(ids)))):
            assignments[test_index] = fold
    spec = FoldSpec(ids, assignments, k)
    logger.info(f"{k}-fold split of {len(ids)} records, fold sizes {spec.fold_sizes()}")
    return spec


class DataManager:
    """
    Manages manifest ingestion and bundle persistence.
    """

    def __init__(self, base_dir: str = ".", classes: Optional[Sequence[str]] = None,
                 vocabulary: Optional[Sequence[str]] = None, label_map: Optional[Mapping[str, str]] = None):
        """
        Initialize the data manager.

        Args:
            base_dir (str): Directory image paths in manifests are resolved against
            classes (sequence, optional): Allowed diagnosis labels; derived from the manifest when omitted
            vocabulary (sequence, optional): Canonical lesion tags; derived from the manifest when omitted
            label_map (dict, optional): raw -> canonical names applied before validation (a merge table)
        """
        if vocabulary is not None:
            _check_vocabulary(vocabulary)
        if classes is not None:
            _check_vocabulary(classes)
        self.image_processor = ImageProcessor(base_dir)
        self.classes = list(classes) if classes is not None else None
        self.vocabulary = list(vocabulary) if vocabulary is not None else None
        self.label_map = dict(label_map or {})

    def _canonical(self, name: str) -> str:
        return self.label_map.get(name, name)

    def load_manifest(self, path: str) -> Dataset:
        """
        Read a tab-separated manifest: id, atlas, image, diagnosis, tags (semicolon-separated).

        Args:
            path (str): Manifest file

        Returns:
            Dataset: Validated records in manifest order
        """
        if not os.path.exists(path):
            raise DataError(f"Manifest '{path}' not found")
        records: List[ImageRecord] = []
        seen: Dict[str, int] = {}
        shape = None
        for line, values in read_tab_rows(path, MANIFEST_FIELDS):
            record = self._parse_row(ManifestRow(*values), line, seen)
            if shape is None:
                shape = record.shape
            elif record.shape != shape:
                raise ManifestError(f"image shape {record.shape} differs from earlier records {shape}",
                                    line=line, field="image")
            seen[record.record_id] = line
            records.append(record)

        if not records:
            raise DataError(f"Manifest '{path}' has no records")
        classes = self.classes if self.classes is not None else sorted({r.diagnosis for r in records if r.diagnosis})
        vocabulary = self.vocabulary if self.vocabulary is not None else sorted({t for r in records for t in r.tags})
        logger.info(f"Loaded {len(records)} records from {path}: {len(classes)} classes, {len(vocabulary)} tags")
        return Dataset(records, list(classes), list(vocabulary))

    def _parse_row(self, row, line: int, seen: Dict[str, int]) -> ImageRecord:
        record_id = row.id.strip()
        if not record_id:
            raise ManifestError("record id is empty", line=line, field="id")
        if record_id in seen:
            raise ManifestError(f"duplicate record id '{record_id}' (first seen on line {seen[record_id]})",
                                line=line, field="id")
        atlas = row.atlas.strip()
        if not atlas:
            raise ManifestError("atlas is empty", line=line, field="atlas")
        if not row.image.strip():
            raise ManifestError("image reference is empty", line=line, field="image")
        try:
            image = self.image_processor.load(row.image)
        except DataError as e:
            raise ManifestError(str(e), line=line, field="image")

        diagnosis = self._canonical(row.diagnosis.strip()) if row.diagnosis.strip() else None
        if diagnosis and self.classes is not None and diagnosis not in self.classes:
            raise ManifestError(f"diagnosis '{diagnosis}' is not a known class", line=line, field="diagnosis")

        tags = frozenset(self._canonical(t.strip()) for t in row.tags.split(TAG_SEPARATOR) if t.strip())
        if self.vocabulary is not None:
            unknown = sorted(tags.difference(self.vocabulary))
            if unknown:
                raise ManifestError(f"lesion tag '{unknown[0]}' is not in the vocabulary", line=line, field="tags")
        if not diagnosis and not tags:
            raise ManifestError("record has neither a diagnosis nor lesion tags", line=line, field="diagnosis")
        return ImageRecord(record_id, atlas, image, diagnosis, tags, row.image.strip()[:256])


def save_bundle(directory: str, dataset: Dataset) -> List[str]:
    """
    Persist a dataset as records.tsv + images.npy + labels.json.

    Args:
        directory (str): Output directory, created if needed
        dataset (Dataset): Records to store

    Returns:
        list: Paths written
    """
    os.makedirs(directory, exist_ok=True)
    frame = pd.DataFrame({
        "id": [r.record_id for r in dataset.records],
        "atlas": [r.atlas for r in dataset.records],
        "diagnosis": [r.diagnosis or "" for r in dataset.records],
        "tags": [TAG_SEPARATOR.join(sorted(r.tags)) for r in dataset.records],
    })
    records_path = os.path.join(directory, RECORDS_FILE)
    images_path = os.path.join(directory, IMAGES_FILE)
    labels_path = os.path.join(directory, LABELS_FILE)
    frame.to_csv(records_path, sep="\t", index=False, lineterminator="\n")
    np.save(images_path, dataset.images(), allow_pickle=False)
    with open(labels_path, "w") as f:
        json.dump({"classes": dataset.classes, "vocabulary": dataset.vocabulary}, f, indent=2, sort_keys=True)
        f.write("\n")
    logger.info(f"Saved bundle of {len(dataset)} records to {directory}")
    return [records_path, images_path, labels_path]


def load_bundle(directory: str) -> Dataset:
    paths = {name: os.path.join(directory, name) for name in (RECORDS_FILE, IMAGES_FILE, LABELS_FILE)}
    missing = [name for name, path in paths.items() if not os.path.exists(path)]
    if missing:
        raise DataError(f"Bundle {directory} is missing {', '.join(missing)}")
    frame = pd.read_csv(paths[RECORDS_FILE], sep="\t", dtype=str, keep_default_na=False)
    images = np.load(paths[IMAGES_FILE], allow_pickle=False)
    with open(paths[LABELS_FILE]) as f:
        try:
            labels = json.load(f)
        except json.JSONDecodeError as e:
            raise DataError(f"Bundle labels file is corrupted: {e}")
    if len(frame) != images.shape[0]:
        raise DataError(f"Bundle {directory} has {len(frame)} records but {images.shape[0]} images")
    records = [
        ImageRecord(row.id, row.atlas, images[i].astype(np.float64), row.diagnosis or None,
                    frozenset(t for t in row.tags.split(TAG_SEPARATOR) if t))
        for i, row in enumerate(frame.itertuples(index=False))
    ]
    return Dataset(records, list(labels.get("classes", [])), list(labels.get("vocabulary", [])))
