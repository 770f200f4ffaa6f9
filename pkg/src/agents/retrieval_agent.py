"""
Retrieval agent.
Extracts penultimate-layer features, indexes them, and answers exact Euclidean
k-nearest-neighbor queries scored by lesion-tag overlap.
"""

import json
import logging
import os
from dataclasses import dataclass
from typing import FrozenSet, Iterable, List, Sequence, Tuple

import numpy as np
import pandas as pd

from src.exceptions import BadArgumentError, DataError
from src.numerics.network import Network

logger = logging.getLogger(__name__)

INDEX_MAGIC = b"LTINDEX1"
FEATURE_BATCH = 64


def extract_features(net: Network, batch) -> np.ndarray:
    """
    Activations feeding the final linear layer, after their nonlinearity.

    Args:
        net (Network): Network with at least two linear layers
        batch: N×C×H×W inputs

    Returns:
        np.ndarray: N×D features, D = net.penultimate_width()
    """
    linear = net.linear_layer_indices()
    if len(linear) < 2:
        raise BadArgumentError("Feature extraction needs a network with a penultimate linear stage")
    batch = np.asarray(batch, dtype=np.float64)
    chunks = [
        net.forward(batch[start:start + FEATURE_BATCH], cache=False, stop_at=linear[-1]).data
        for start in range(0, batch.shape[0], FEATURE_BATCH)
    ]
    features = np.concatenate(chunks, axis=0)
    return features.reshape(features.shape[0], -1)


def _normalize_rows(features: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(features, axis=-1, keepdims=True)
    return np.divide(features, norms, out=np.zeros_like(features), where=norms > 0)


@dataclass(frozen=True)
class FeatureIndex:
    """
    Immutable feature matrix with one row per indexed image.

    Attributes:
        features (np.ndarray): M×D rows
        ids (tuple): M record ids
        normalized (bool): Rows (and queries) are scaled to unit length
    """
    features: np.ndarray
    ids: Tuple[str, ...]
    normalized: bool = False

    def __post_init__(self):
        features = np.array(self.features, dtype=np.float64)
        ids = tuple(str(i) for i in self.ids)
        if features.ndim != 2 or features.shape[0] == 0:
            raise BadArgumentError(f"Index needs a nonempty M×D feature matrix, got shape {features.shape}")
        if len(ids) != features.shape[0]:
            raise BadArgumentError(f"{features.shape[0]} feature rows but {len(ids)} ids")
        if len(set(ids)) != len(ids):
            raise BadArgumentError("Index ids must be unique")
        if not np.all(np.isfinite(features)):
            raise BadArgumentError("Index features must be finite")
        if self.normalized:
            features = _normalize_rows(features)
        features.setflags(write=False)
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "ids", ids)

    @classmethod
    def build(cls, net: Network, images, ids: Sequence[str], normalize: bool = False) -> "FeatureIndex":
        return cls(extract_features(net, images), tuple(ids), normalize)

    @property
    def size(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def to_bytes(self) -> bytes:
        """Magic, (M, D) as little-endian u64, row-major f64 values, then a length-prefixed JSON id table."""
        table = json.dumps({"ids": list(self.ids), "normalized": self.normalized}, sort_keys=True).encode("utf-8")
        return b"".join([
            INDEX_MAGIC,
            np.array([self.size, self.dim], dtype="<u8").tobytes(),
            np.ascontiguousarray(self.features, dtype="<f8").tobytes(),
            np.array([len(table)], dtype="<u8").tobytes(),
            table,
        ])

    @classmethod
    def from_bytes(cls, payload: bytes) -> "FeatureIndex":
        if payload[:len(INDEX_MAGIC)] != INDEX_MAGIC:
            raise DataError("Not a feature index file (bad magic)")
        offset = len(INDEX_MAGIC)
        if len(payload) < offset + 16:
            raise DataError("Feature index truncated")
        rows, dim = (int(v) for v in np.frombuffer(payload[offset:offset + 16], dtype="<u8"))
        offset += 16
        end = offset + 8 * rows * dim
        if end + 8 > len(payload):
            raise DataError("Feature index truncated")
        features = np.frombuffer(payload[offset:end], dtype="<f8").reshape(rows, dim)
        table_len = int(np.frombuffer(payload[end:end + 8], dtype="<u8")[0])
        try:
            table = json.loads(payload[end + 8:end + 8 + table_len].decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise DataError(f"Feature index id table is corrupted: {e}")
        # rows were normalized before storage
        index = cls(features, tuple(table["ids"]), False)
        object.__setattr__(index, "normalized", bool(table.get("normalized", False)))
        return index

    def save(self, path: str):
        with open(path, "wb") as f:
            f.write(self.to_bytes())

    @classmethod
    def load(cls, path: str) -> "FeatureIndex":
        if not os.path.exists(path):
            raise DataError(f"Feature index '{path}' not found")
        with open(path, "rb") as f:
            return cls.from_bytes(f.read())


def knn_retrieve(index: FeatureIndex, query, k: int) -> List[Tuple[str, float]]:
    """
    Exact k nearest neighbors by Euclidean distance; ties go to the smaller record id.

    Args:
        index (FeatureIndex): Indexed features
        query: D-dimensional feature vector
        k (int): 1 <= k <= M

    Returns:
        list: (record id, distance) pairs in ascending distance
    """
    query = np.asarray(query, dtype=np.float64).reshape(-1)
    if query.size != index.dim:
        raise BadArgumentError(f"Query has {query.size} features, index has {index.dim}")
    if not 1 <= k <= index.size:
        raise BadArgumentError(f"k must lie in [1, {index.size}], got {k}")
    if index.normalized:
        query = _normalize_rows(query)
    distances = np.sqrt(((index.features - query) ** 2).sum(axis=1))
    order = sorted(range(index.size), key=lambda i: (distances[i], index.ids[i]))[:k]
    return [(index.ids[i], float(distances[i])) for i in order]


def match_flag(query_tags: Iterable[str], neighbor_tags: Iterable[str]) -> bool:
    """True when the neighbor shares at least one lesion tag with the query."""
    return bool(set(query_tags) & set(neighbor_tags))


@dataclass(frozen=True)
class RetrievalHit:
    query_id: str
    rank: int
    neighbor_id: str
    distance: float
    match: bool


class RetrievalAgent:
    """
    Answers image queries against an index of training images.
    """

    def __init__(self, net: Network, index: FeatureIndex, index_tags: Sequence[FrozenSet[str]]):
        """
        Initialize the retrieval agent.

        Args:
            net (Network): Network the index features were extracted with
            index (FeatureIndex): Indexed training features
            index_tags (sequence): Lesion tags of each indexed record, aligned with index.ids
        """
        if len(index_tags) != index.size:
            raise BadArgumentError(f"{len(index_tags)} tag sets for an index of {index.size} records")
        if net.penultimate_width() != index.dim:
            raise BadArgumentError(f"Network features have width {net.penultimate_width()}, index has {index.dim}")
        self.net = net
        self.index = index
        self.tags_by_id = dict(zip(index.ids, index_tags))

    def query(self, images, query_ids: Sequence[str], query_tags: Sequence[FrozenSet[str]], k: int) -> List[RetrievalHit]:
        features = extract_features(self.net, images)
        hits = []
        for query_id, feature, tags in zip(query_ids, features, query_tags):
            for rank, (neighbor_id, distance) in enumerate(knn_retrieve(self.index, feature, k), start=1):
                hits.append(RetrievalHit(query_id, rank, neighbor_id, distance,
                                         match_flag(tags, self.tags_by_id[neighbor_id])))
        if hits:
            logger.info(f"Retrieved {k} neighbors for {len(query_ids)} queries, "
                        f"tag match rate {match_rate(hits):.4f}")
        return hits


def match_rate(hits: Sequence[RetrievalHit]) -> float:
    return float(np.mean([hit.match for hit in hits])) if hits else 0.0


def write_retrieval_report(path: str, hits: Sequence[RetrievalHit]):
    """Per query, k rows of (query id, rank, neighbor id, distance, match flag)."""
    frame = pd.DataFrame(
        [(h.query_id, h.rank, h.neighbor_id, h.distance, int(h.match)) for h in hits],
        columns=["query_id", "rank", "neighbor_id", "distance", "match"],
    )
    frame.to_csv(path, sep="\t", index=False, float_format="%.12g", lineterminator="\n")
