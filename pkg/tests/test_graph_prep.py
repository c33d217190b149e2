import logging

import numpy as np
import pytest
from hypothesis import given, strategies as st

from pairsub.core import NeighborGraph
from pairsub.graph_prep import (
    DirectedKnn,
    EmbeddingMatrix,
    PredictionTable,
    build_knn,
    margin_utility,
    symmetrize,
)

import oracles


def test_identical_vectors_tie_break_by_id():
    e = EmbeddingMatrix([30, 10, 20], np.ones((3, 4)))
    knn = build_knn(e, 1)
    assert knn.ids.tolist() == [10, 20, 30]
    assert knn.neighbors[:, 0].tolist() == [20, 10, 10]
    assert knn.sims[:, 0].tolist() == pytest.approx([1.0, 1.0, 1.0])


def test_orthogonal_vectors_are_mutual_neighbors_at_zero():
    knn = build_knn(EmbeddingMatrix([1, 2], np.eye(2)), 1)
    assert knn.neighbors[:, 0].tolist() == [2, 1]
    assert knn.sims[:, 0].tolist() == [0.0, 0.0]


def test_negative_cosines_clamped():
    knn = build_knn(EmbeddingMatrix([1, 2], [[1.0, 0.0], [-1.0, 0.0]]), 1)
    assert knn.sims.min() == 0.0


def test_knn_matches_exhaustive_oracle(rng):
    vec = rng.normal(size=(100, 8))
    ids = np.sort(rng.choice(10_000, 100, replace=False)).astype(np.uint64)
    knn = build_knn(EmbeddingMatrix(ids, vec), 10, block=17)
    want = oracles.knn(vec.tolist(), ids.tolist(), 10)
    for i, v in enumerate(knn.ids.tolist()):
        assert knn.neighbors[i].tolist() == want[v]


def test_knn_independent_of_workers_and_blocks(rng):
    e = EmbeddingMatrix(np.arange(300), rng.normal(size=(300, 5)))
    base = build_knn(e, 7)
    for workers, block in ((4, 16), (16, 33)):
        other = build_knn(e, 7, workers=workers, block=block)
        assert np.array_equal(base.neighbors, other.neighbors)
        assert base.sims.tobytes() == other.sims.tobytes()


def test_knn_rejects_bad_k():
    e = EmbeddingMatrix([1, 2, 3], np.eye(3))
    for k in (0, 3):
        with pytest.raises(ValueError):
            build_knn(e, k)


def test_symmetrize_single_edge():
    g = symmetrize(DirectedKnn(np.array([1, 2], np.uint64), np.array([[2], [1]], np.uint64), np.array([[0.5], [0.5]])))
    assert g.neighbors(1)[0].tolist() == [2] and g.neighbors(2)[0].tolist() == [1]
    g = symmetrize(DirectedKnn(np.array([1, 2, 3], np.uint64), np.array([[2], [3], [2]], np.uint64),
                               np.array([[0.5], [0.25], [0.25]])))
    assert g.neighbors(2)[0].tolist() == [1, 3]
    assert g.edge_count == 2


def test_symmetrize_keeps_max_on_mismatch(caplog):
    knn = DirectedKnn(np.array([1, 2], np.uint64), np.array([[2], [1]], np.uint64), np.array([[0.5], [0.6]]))
    with caplog.at_level(logging.WARNING):
        g = symmetrize(knn)
    assert g.weights.tolist() == [0.6, 0.6]
    assert "unequal" in caplog.text


def test_symmetrized_graph_is_idempotent(rng):
    e = EmbeddingMatrix(np.arange(100), rng.normal(size=(100, 8)))
    g = symmetrize(build_knn(e, 10))
    assert g.degrees.min() >= 10
    src, dst, sim = g.directed_edges()
    # rebuilding from the full edge list changes nothing
    again = NeighborGraph.from_edges(src, dst, sim)
    assert np.array_equal(again.indices, g.indices) and again.weights.tobytes() == g.weights.tobytes()


@given(st.integers(0, 2**32), st.floats(1e-3, 1e3))
def test_knn_scale_invariant(seed, scale):
    rng = np.random.default_rng(seed)
    vec = rng.normal(size=(30, 4))
    a = build_knn(EmbeddingMatrix(np.arange(30), vec), 3)
    b = build_knn(EmbeddingMatrix(np.arange(30), vec * scale), 3)
    assert np.array_equal(a.neighbors, b.neighbors)
    np.testing.assert_allclose(a.sims, b.sims, atol=1e-12)


def test_margin_examples():
    p = PredictionTable([1, 2, 3], [[0.5, 0.5, 0.0], [1.0, 0.0, 0.0], [0.6, 0.3, 0.1]])
    raw = margin_utility(p, center=False)
    assert raw.lookup([1, 2, 3]).tolist() == pytest.approx([1.0, 0.0, 0.7])
    assert margin_utility(p).values.min() == 0.0


@given(st.integers(0, 2**32), st.integers(3, 8))
def test_margin_ignores_order_of_lower_classes(seed, c):
    rng = np.random.default_rng(seed)
    probs = rng.dirichlet(np.ones(c), size=20)
    perm = np.argsort(-probs, axis=1)
    shuffled = probs.copy()
    for i in range(20):
        tail = perm[i, 2:]
        shuffled[i, tail] = probs[i, rng.permutation(tail)]
    a = margin_utility(PredictionTable(np.arange(20), probs), center=False)
    b = margin_utility(PredictionTable(np.arange(20), shuffled), center=False)
    assert a.values.tolist() == b.values.tolist()


def test_prediction_validation():
    with pytest.raises(ValueError):
        PredictionTable([1], [[0.7, 0.7]])
    with pytest.raises(ValueError):
        EmbeddingMatrix([1, 1], np.ones((2, 2)))
    with pytest.raises(ValueError):
        build_knn(EmbeddingMatrix([1, 2], [[0.0, 0.0], [1.0, 0.0]]), 1)
