"""
Taxonomy processing module.
Reconciles diagnosis labels and lesion tags across atlases with gestalt string similarity,
conservative merging into a canonical atlas, and image-count filtering.
"""

import logging
import os
import re
from dataclasses import dataclass, field
from difflib import SequenceMatcher
from typing import Dict, Iterable, List, Mapping, Optional, Tuple

import pandas as pd

from src.exceptions import BadArgumentError, ManifestError
from src.processors.table_reader import read_tab_rows

logger = logging.getLogger(__name__)

DEFAULT_MERGE_THRESHOLD = 0.8
DEFAULT_MIN_COUNT = 300
DEFAULT_CANONICAL_SOURCE = "DermQuest"
ENTRY_FIELDS = ["atlas", "name", "count"]

_PUNCTUATION = re.compile(r"[^\w\s]")
_WHITESPACE = re.compile(r"\s+")


def normalize_label(text: str) -> str:
    """Lowercase, strip punctuation and collapse whitespace."""
    text = _PUNCTUATION.sub("", str(text).lower())
    return _WHITESPACE.sub(" ", text).strip()


def similarity(a: str, b: str, normalize: bool = True) -> float:
    """
    Gestalt similarity S = 2M / T.

    M counts the characters matched by recursively taking the longest common substring
    (earliest in a, then earliest in b, on ties) and recursing on both sides of it.
    T is the combined length of both strings. Two empty strings score 1.0.

    Args:
        a (str): First label
        b (str): Second label
        normalize (bool): Apply normalize_label to both strings first

    Returns:
        float: Similarity in [0, 1]
    """
    if normalize:
        a, b = normalize_label(a), normalize_label(b)
    return SequenceMatcher(None, a, b, autojunk=False).ratio()


@dataclass(frozen=True)
class LabelEntry:
    """
    One label as published by one atlas.

    Attributes:
        raw_name (str): Label text as published
        source_atlas (str): Atlas identifier
        image_count (int): Images carrying this label in that atlas
    """
    raw_name: str
    source_atlas: str
    image_count: int = 0

    def __post_init__(self):
        if not normalize_label(self.raw_name):
            raise BadArgumentError(f"Label '{self.raw_name}' is empty after normalization")
        if self.image_count < 0:
            raise BadArgumentError(f"Image count for '{self.raw_name}' must be nonnegative")


@dataclass(frozen=True)
class MergePair:
    raw_name: str
    canonical_name: str
    score: float


@dataclass
class MergeTable:
    """
    Mapping from raw label names to canonical names.

    Attributes:
        mapping (dict): raw name -> canonical name; canonical names map to themselves
        threshold (float): Similarity a pair had to exceed to merge
        pairs (list): The merges performed, with their similarity
    """
    mapping: Dict[str, str] = field(default_factory=dict)
    threshold: float = DEFAULT_MERGE_THRESHOLD
    pairs: List[MergePair] = field(default_factory=list)

    def apply(self, name: str) -> str:
        return self.mapping.get(name, name)

    def canonical_names(self) -> List[str]:
        return sorted(set(self.mapping.values()))

    def merged_counts(self, counts: Mapping[str, int]) -> Dict[str, int]:
        """Sum image counts onto canonical names."""
        totals: Dict[str, int] = {}
        for name, count in counts.items():
            canonical = self.apply(name)
            totals[canonical] = totals.get(canonical, 0) + int(count)
        return totals

    def to_frame(self) -> pd.DataFrame:
        rows = sorted(self.mapping.items())
        return pd.DataFrame(rows, columns=["raw_name", "canonical_name"])

    def save(self, path: str):
        """Write the table as two tab-separated columns."""
        self.to_frame().to_csv(path, sep="\t", index=False, header=False, lineterminator="\n")


def _best_canonical(name: str, canonical: Iterable[str]) -> Tuple[Optional[str], float]:
    """Most similar canonical name; ties go to the lexicographically smallest."""
    best_name, best_score = None, -1.0
    for candidate in sorted(canonical):
        score = similarity(name, candidate)
        if score > best_score:
            best_name, best_score = candidate, score
    return best_name, best_score


def _check_threshold(threshold: float):
    if not 0 < threshold <= 1:
        raise BadArgumentError(f"Merge threshold must lie in (0, 1], got {threshold}")


class TaxonomyProcessor:
    """
    Handles label reconciliation: similarity, merging, frequency filtering and tag deduplication.
    """

    def __init__(self, threshold: float = DEFAULT_MERGE_THRESHOLD,
                 canonical_source: str = DEFAULT_CANONICAL_SOURCE,
                 min_count: int = DEFAULT_MIN_COUNT):
        """
        Initialize the taxonomy processor.

        Args:
            threshold (float): Similarity a pair must exceed to merge
            canonical_source (str): Atlas whose taxonomy the others merge into
            min_count (int): Labels need strictly more images than this to be retained
        """
        _check_threshold(threshold)
        self.threshold = threshold
        self.canonical_source = canonical_source
        self.min_count = min_count

    similarity = staticmethod(similarity)

    def merge_labels(self, entries: List[LabelEntry], threshold: Optional[float] = None,
                     canonical_source: Optional[str] = None) -> MergeTable:
        """
        Map every non-canonical label onto its most similar canonical label when S > threshold.

        Args:
            entries (list): Label entries from all atlases
            threshold (float, optional): Overrides the processor threshold
            canonical_source (str, optional): Overrides the canonical atlas

        Returns:
            MergeTable: Idempotent raw -> canonical mapping
        """
        threshold = self.threshold if threshold is None else threshold
        canonical_source = canonical_source or self.canonical_source
        _check_threshold(threshold)
        table = MergeTable(threshold=threshold)
        if not entries:
            return table

        canonical = sorted({e.raw_name for e in entries if e.source_atlas == canonical_source})
        if not canonical:
            logger.warning(f"No entries from canonical atlas '{canonical_source}'; nothing will merge")
        for name in canonical:
            table.mapping[name] = name

        others = sorted({e.raw_name for e in entries if e.raw_name not in table.mapping})
        for name in others:
            target, score = _best_canonical(name, canonical)
            if target is not None and score > threshold:
                table.mapping[name] = target
                table.pairs.append(MergePair(name, target, score))
            else:
                table.mapping[name] = name

        logger.info(f"Merged {len(table.pairs)} of {len(others)} non-canonical labels into '{canonical_source}'")
        return table

    def filter_min_count(self, counts: Mapping[str, int], min_count: Optional[int] = None) -> List[str]:
        """
        Keep labels with strictly more than min_count images.

        Args:
            counts (dict): label -> image count
            min_count (int, optional): Overrides the processor minimum

        Returns:
            list: Retained labels in lexicographic order
        """
        min_count = self.min_count if min_count is None else min_count
        if min_count < 1:
            raise BadArgumentError(f"min_count must be a positive integer, got {min_count}")
        return sorted(label for label, count in counts.items() if count > min_count)

    def merge_and_filter(self, entries: List[LabelEntry]) -> Tuple[MergeTable, Dict[str, int], List[str]]:
        """Merge diagnosis labels, sum their counts and apply the image-count filter."""
        table = self.merge_labels(entries)
        counts: Dict[str, int] = {}
        for entry in entries:
            canonical = table.apply(entry.raw_name)
            counts[canonical] = counts.get(canonical, 0) + entry.image_count
        return table, counts, self.filter_min_count(counts)

    def dedupe_lesion_tags(self, tags: Mapping[str, int], threshold: Optional[float] = None,
                           min_count: Optional[int] = None) -> "TagDedupResult":
        """
        Fold duplicate lesion tags together, then drop infrequent ones.

        Tags are visited by descending count (ties: lexicographic). A tag joins the most
        similar tag already kept when S > threshold, otherwise it is kept as canonical.
        Counts are summed before filtering.

        Args:
            tags (dict): tag -> image count
            threshold (float, optional): Overrides the processor threshold
            min_count (int, optional): Overrides the processor minimum

        Returns:
            TagDedupResult: Canonical tags (lexicographic), merge table and summed counts
        """
        threshold = self.threshold if threshold is None else threshold
        _check_threshold(threshold)
        table = MergeTable(threshold=threshold)
        canonical: List[str] = []
        for tag in sorted(tags, key=lambda t: (-int(tags[t]), t)):
            target, score = _best_canonical(tag, canonical)
            if target is not None and score > threshold:
                table.mapping[tag] = target
                table.pairs.append(MergePair(tag, target, score))
            else:
                table.mapping[tag] = tag
                canonical.append(tag)
        counts = table.merged_counts(tags)
        kept = self.filter_min_count(counts, min_count)
        logger.info(f"Lesion tags: {len(tags)} in, {len(canonical)} after merging, {len(kept)} retained")
        return TagDedupResult(kept, table, counts)


@dataclass
class TagDedupResult:
    tags: List[str]
    table: MergeTable
    counts: Dict[str, int]


def load_label_entries(path: str) -> List[LabelEntry]:
    """
    Read label entries from tab-separated text: atlas, raw name, count (no header).

    Args:
        path (str): Entries file

    Returns:
        list: Parsed LabelEntry objects in file order
    """
    if not os.path.exists(path):
        raise ManifestError(f"Label entries file '{path}' not found")

    entries = []
    for line, (atlas, name, count) in read_tab_rows(path, ENTRY_FIELDS, comments=True):
        if not atlas.strip():
            raise ManifestError("atlas is empty", line=line, field="atlas")
        if not count.strip().isdigit():
            raise ManifestError(f"count '{count}' is not a nonnegative integer", line=line, field="count")
        try:
            entries.append(LabelEntry(name, atlas.strip(), int(count)))
        except BadArgumentError as e:
            raise ManifestError(str(e), line=line, field="name")
    return entries


def write_merge_report(path: str, entries: List[LabelEntry], table: MergeTable, retained: List[str]):
    """Write the summary report: label counts in and out, then every merge pair with its similarity."""
    lines = [
        f"labels_in: {len({e.raw_name for e in entries})}",
        f"canonical_labels: {len(table.canonical_names())}",
        f"labels_out: {len(retained)}",
        f"threshold: {table.threshold}",
        f"merged_pairs: {len(table.pairs)}",
    ]
    for pair in sorted(table.pairs, key=lambda p: (p.canonical_name, p.raw_name)):
        lines.append(f"pair\t{pair.raw_name}\t{pair.canonical_name}\t{pair.score:.6f}")
    for label in retained:
        lines.append(f"retained\t{label}")
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")
