"""
Tests for feature extraction, the feature index and nearest-neighbor retrieval.
"""

import numpy as np
import pytest

from src.agents.retrieval_agent import (
    FeatureIndex,
    RetrievalAgent,
    extract_features,
    knn_retrieve,
    match_flag,
    match_rate,
    write_retrieval_report,
)
from src.exceptions import BadArgumentError, DataError
from src.numerics.layers import LayerSpec
from src.numerics.network import Network, default_layer_specs


@pytest.fixture
def default_net():
    return Network(default_layer_specs(4), seed=0)


def test_default_network_features_have_width_64(default_net, rng):
    features = extract_features(default_net, rng.random((3, 3, 32, 32)))
    assert features.shape == (3, 64)
    assert np.all(features >= 0)


def test_identical_inputs_give_identical_features(default_net, rng):
    image = rng.random((1, 3, 32, 32))
    features = extract_features(default_net, np.concatenate([image, image]))
    assert np.array_equal(features[0], features[1])


def test_features_depend_on_penultimate_weights(default_net, rng):
    images = rng.random((2, 3, 32, 32))
    before = extract_features(default_net, images)
    default_net.parameters()["layer7.linear.weight"].data *= 2.0
    after = extract_features(default_net, images)
    assert not np.array_equal(before, after)


def test_network_without_penultimate_stage_is_rejected():
    net = Network([LayerSpec.flatten(), LayerSpec.linear(3)], (1, 2, 2), seed=0)
    with pytest.raises(BadArgumentError):
        extract_features(net, np.zeros((1, 1, 2, 2)))


def test_self_query_comes_first(rng):
    features = rng.standard_normal((10, 8))
    index = FeatureIndex(features, [f"r{i}" for i in range(10)])
    neighbors = knn_retrieve(index, features[6], 3)
    assert neighbors[0] == ("r6", 0.0)


def test_three_four_five_triangle():
    index = FeatureIndex(np.array([[0.0, 0.0], [3.0, 4.0]]), ["a", "b"])
    assert knn_retrieve(index, [0.0, 0.0], 2) == [("a", 0.0), ("b", 5.0)]


def test_equal_distances_order_by_id():
    index = FeatureIndex(np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0]]), ["z", "m", "a"])
    assert [rid for rid, _ in knn_retrieve(index, [0.0, 0.0], 3)] == ["a", "m", "z"]


@pytest.mark.parametrize("seed", range(100))
def test_matches_exhaustive_sort(seed):
    rng = np.random.default_rng(seed)
    features = rng.standard_normal((int(rng.integers(1, 30)), 5))
    ids = [f"id{i:03d}" for i in range(features.shape[0])]
    index = FeatureIndex(features, ids)
    query = rng.standard_normal(5)
    k = int(rng.integers(1, features.shape[0] + 1))
    distances = [float(np.linalg.norm(row - query)) for row in features]
    expected = sorted(zip(distances, ids))[:k]
    result = knn_retrieve(index, query, k)
    assert [rid for rid, _ in result] == [rid for _, rid in expected]
    assert [d for _, d in result] == pytest.approx([d for d, _ in expected])


def test_k_out_of_range_is_rejected():
    index = FeatureIndex(np.zeros((2, 3)) + np.arange(2)[:, None], ["a", "b"])
    with pytest.raises(BadArgumentError):
        knn_retrieve(index, np.zeros(3), 3)
    with pytest.raises(BadArgumentError):
        knn_retrieve(index, np.zeros(3), 0)
    with pytest.raises(BadArgumentError):
        knn_retrieve(index, np.zeros(4), 1)


def test_index_invariants():
    with pytest.raises(BadArgumentError):
        FeatureIndex(np.zeros((2, 3)), ["a", "a"])
    with pytest.raises(BadArgumentError):
        FeatureIndex(np.array([[np.inf, 0.0]]), ["a"])
    index = FeatureIndex(np.ones((1, 2)), ["a"])
    with pytest.raises(ValueError):
        index.features[0, 0] = 5.0


def test_normalized_index_compares_directions():
    index = FeatureIndex(np.array([[10.0, 0.0], [0.0, 0.5]]), ["far", "near"], normalized=True)
    assert knn_retrieve(index, [3.0, 0.0], 1) == [("far", 0.0)]


def test_index_round_trip(tmp_path, rng):
    index = FeatureIndex(rng.standard_normal((4, 3)), ["a", "b", "c", "d"], normalized=True)
    index.save(str(tmp_path / "index.bin"))
    loaded = FeatureIndex.load(str(tmp_path / "index.bin"))
    assert loaded.ids == index.ids
    assert loaded.normalized
    assert np.array_equal(loaded.features, index.features)
    with pytest.raises(DataError):
        FeatureIndex.from_bytes(b"LTINDEX1")
    with pytest.raises(DataError):
        FeatureIndex.from_bytes(b"garbage!")


def test_match_flag_examples():
    assert match_flag({"crust", "ulceration"}, {"ulceration"})
    assert not match_flag({"scales"}, {"edema"})
    assert not match_flag({"scales"}, set())


def test_agent_reports_hits(tmp_path, default_net, rng):
    images = rng.random((4, 3, 32, 32))
    index = FeatureIndex.build(default_net, images, ["i0", "i1", "i2", "i3"])
    tags = [frozenset({"crust"}), frozenset({"scales"}), frozenset({"crust", "papule"}), frozenset({"edema"})]
    agent = RetrievalAgent(default_net, index, tags)
    hits = agent.query(images[:2], ["q0", "q1"], [frozenset({"crust"}), frozenset({"scales"})], k=2)
    assert len(hits) == 4
    assert (hits[0].neighbor_id, hits[0].distance, hits[0].match) == ("i0", 0.0, True)
    assert (hits[2].neighbor_id, hits[2].match) == ("i1", True)
    assert match_rate(hits) >= 0.5

    write_retrieval_report(str(tmp_path / "retrieval.tsv"), hits)
    lines = (tmp_path / "retrieval.tsv").read_text().splitlines()
    assert lines[0] == "query_id\trank\tneighbor_id\tdistance\tmatch"
    assert lines[1] == "q0\t1\ti0\t0\t1"
    assert len(lines) == 5


def test_agent_rejects_misaligned_tags(default_net, rng):
    index = FeatureIndex(rng.random((2, 64)), ["a", "b"])
    with pytest.raises(BadArgumentError):
        RetrievalAgent(default_net, index, [frozenset()])
