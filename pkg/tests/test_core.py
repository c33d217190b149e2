import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from pairsub.core import (
    GraphFormatError,
    MissingUtilityError,
    NeighborGraph,
    ObjectiveParams,
    Solution,
    UnknownNodeError,
    UtilityTable,
    center_utilities,
    marginal_gain,
    monotonicity_offset,
    objective_score,
    sequential_sum,
)
from pairsub.synthetic import random_instance

import oracles

P = ObjectiveParams(0.9, 0.1)


def pair_graph(a=1, b=2, s=0.4):
    return NeighborGraph.from_edges([a, b], [b, a], [s, s])


def test_params_validation():
    assert ObjectiveParams.balanced(0.9).beta == pytest.approx(0.1)
    with pytest.raises(ValueError):
        ObjectiveParams(0.0, 0.1)
    with pytest.raises(ValueError):
        ObjectiveParams(0.5, -0.1)
    with pytest.raises(ValueError):
        ObjectiveParams.balanced(1.5)


def test_graph_rejects_asymmetry_self_loops_and_negative_weights():
    with pytest.raises(GraphFormatError):
        NeighborGraph.from_edges([1], [2], [0.5])
    with pytest.raises(GraphFormatError):
        NeighborGraph.from_edges([1], [1], [0.5])
    with pytest.raises(GraphFormatError):
        NeighborGraph.from_edges([1, 2], [2, 1], [1.5, 1.5])
    with pytest.raises(GraphFormatError):
        NeighborGraph.from_edges([1, 2], [2, 1], [0.5, 0.4])


def test_negative_similarities_are_clamped():
    g = NeighborGraph.from_edges([1, 2], [2, 1], [-0.1, -0.1])
    assert g.weights.tolist() == [0.0, 0.0]


def test_float_ids_rejected():
    with pytest.raises(ValueError):
        NeighborGraph.from_edges([1.5, 2.0], [2.0, 1.5], [0.1, 0.1])


def test_graph_keeps_sparse_64_bit_ids():
    big = 2**64 - 5
    g = NeighborGraph.from_edges([7, big], [big, 7], [0.3, 0.3], nodes=[3])
    assert g.ids.tolist() == [3, 7, big]
    assert g.edge_count == 1
    nbrs, sims = g.neighbors(big)
    assert nbrs.tolist() == [7] and sims.tolist() == [0.3]


def test_score_single_node():
    g = NeighborGraph.empty([1])
    assert objective_score(Solution.of([1]), g, UtilityTable.from_mapping({1: 1.0}), P) == pytest.approx(0.9)


def test_score_empty_set():
    g = NeighborGraph.empty([1])
    assert objective_score(Solution.of([]), g, UtilityTable.from_mapping({1: 1.0}), P) == 0.0


def test_score_pair_by_hand():
    u = UtilityTable.from_mapping({1: 1.0, 2: 0.5})
    assert objective_score(Solution.of([1, 2]), pair_graph(), u, P) == pytest.approx(1.31, abs=1e-12)


def test_score_errors_name_the_node():
    g = pair_graph()
    with pytest.raises(MissingUtilityError) as err:
        objective_score(Solution.of([1, 2]), g, UtilityTable.from_mapping({1: 1.0}), P)
    assert err.value.node == 2
    with pytest.raises(UnknownNodeError) as err:
        objective_score(Solution.of([1, 9]), g, UtilityTable.from_mapping({1: 1.0, 2: 1.0, 9: 1.0}), P)
    assert err.value.node == 9


def test_marginal_gain_examples():
    g = pair_graph(1, 2, 0.4)
    u = UtilityTable.from_mapping({1: 1.0, 2: 0.5})
    assert marginal_gain(Solution.of([]), 1, g, u, P) == pytest.approx(0.9)
    assert marginal_gain(Solution.of([1]), 2, g, u, P) == pytest.approx(0.41, abs=1e-12)
    with pytest.raises(ValueError):
        marginal_gain(Solution.of([1]), 1, g, u, P)


def test_marginal_gain_equals_score_difference(rng):
    for _ in range(200):
        n = int(rng.integers(2, 12))
        g, u = random_instance(rng, n)
        ids = g.ids.tolist()
        members = [v for v in ids if rng.random() < 0.4]
        rest = [v for v in ids if v not in members]
        if not rest:
            continue
        v = rest[int(rng.integers(len(rest)))]
        gain = marginal_gain(Solution.of(members), v, g, u, P)
        diff = objective_score(Solution.of(members + [v]), g, u, P) - objective_score(Solution.of(members), g, u, P)
        assert gain == pytest.approx(diff, abs=1e-12)


def test_score_matches_pairwise_oracle(rng):
    for _ in range(100):
        g, u = random_instance(rng, int(rng.integers(1, 15)))
        adj, util = oracles.adjacency(g), u.to_dict()
        members = [v for v in g.ids.tolist() if rng.random() < 0.5]
        got = objective_score(Solution.of(members), g, u, P.with_offset(0.25))
        assert got == pytest.approx(oracles.score(members, adj, util, 0.9, 0.1, 0.25), abs=1e-12)


def test_offset_examples():
    assert monotonicity_offset(NeighborGraph.empty([1]), P) == 0.0
    # node 2 has weighted degree 2.0
    g = NeighborGraph.from_edges([1, 2, 2, 3], [2, 1, 3, 2], [1.0, 1.0, 1.0, 1.0])
    assert monotonicity_offset(g, P) == pytest.approx(2.0 / 9, abs=1e-12)


def test_offset_makes_objective_monotone(rng):
    for _ in range(40):
        n = int(rng.integers(2, 9))
        g, u = random_instance(rng, n, edge_prob=0.6)
        p = P.with_offset(monotonicity_offset(g, P))
        ids = g.ids.tolist()
        f = {c: objective_score(Solution.of(c), g, u, p)
             for r in range(n + 1) for c in itertools.combinations(ids, r)}
        for a, fa in f.items():
            for b in itertools.combinations(a, len(a) - 1) if a else ():
                assert f[b] <= fa + 1e-12


def test_center_utilities():
    c = center_utilities(UtilityTable.from_mapping({1: 0.2, 2: 0.7}))
    assert c.lookup([1, 2]).tolist() == pytest.approx([0.0, 0.5])
    same = UtilityTable.from_mapping({1: 0.0, 2: 1.0})
    assert center_utilities(same).to_dict() == same.to_dict()
    assert center_utilities(UtilityTable.from_mapping({1: 0.3, 2: 0.3})).values.tolist() == [0.0, 0.0]


def test_solution_is_sorted_and_unique():
    s = Solution.of([5, 1, 3])
    assert s.members.tolist() == [1, 3, 5] and s.k == 3 and 3 in s and 4 not in s
    with pytest.raises(ValueError):
        Solution.of([1, 1])


@given(st.lists(st.floats(-1e6, 1e6, allow_nan=False), max_size=50), st.floats(-10, 10, allow_nan=False))
def test_sequential_sum_is_a_left_fold(values, start):
    total = start
    for v in values:
        total += v
    assert sequential_sum(np.array(values, dtype=float), start) == total


@given(st.integers(0, 2**32), st.integers(1, 12))
def test_score_is_order_independent_and_submodular(seed, n):
    rng = np.random.default_rng(seed)
    g, u = random_instance(rng, n)
    ids = g.ids.tolist()
    a = [v for v in ids if rng.random() < 0.3]
    b = sorted(set(a) | {v for v in ids if rng.random() < 0.3})
    rest = [v for v in ids if v not in b]
    assert objective_score(Solution.of(a[::-1]), g, u, P) == objective_score(Solution.of(a), g, u, P)
    for v in rest:
        assert marginal_gain(Solution.of(a), v, g, u, P) >= marginal_gain(Solution.of(b), v, g, u, P) - 1e-12
