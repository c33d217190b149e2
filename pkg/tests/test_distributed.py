import numpy as np
import pytest
from hypothesis import given, strategies as st

from pairsub.core import ObjectiveParams, Solution, objective_score
from pairsub.distributed import (
    DistributedConfig,
    delta_linear,
    distributed_select,
    normalize_scores,
    plan_round,
    random_partition,
)
from pairsub.greedy import InfeasibleError, greedy_select
from pairsub.synthetic import random_instance

P = ObjectiveParams(0.9, 0.1)


def test_delta_examples():
    assert delta_linear(100, 4, 1, 10, 0.75) == 61
    assert delta_linear(100, 4, 4, 10, 0.75) == 10
    assert delta_linear(100, 1, 1, 10, 1.0) == 10
    with pytest.raises(ValueError):
        delta_linear(100, 4, 5, 10)
    with pytest.raises(ValueError):
        delta_linear(100, 4, 0, 10)


def test_delta_avoids_float_ceiling_drift():
    # 0.1 * 30 / 3 is 1.0000000000000002 in floats
    assert delta_linear(40, 3, 0 + 1, 10, 0.1) == 12
    assert delta_linear(13, 3, 2, 10, 0.1) == 11


@given(st.integers(1, 10_000), st.integers(1, 40), st.floats(0.01, 1.0), st.data())
def test_round_sizes_shrink_to_k(n0, r, gamma, data):
    k = data.draw(st.integers(0, n0))
    sizes = [delta_linear(n0, r, i, k, gamma) for i in range(1, r + 1)]
    assert sizes[-1] == k
    assert all(a >= b for a, b in zip(sizes, sizes[1:]))
    assert all(k <= s <= n0 for s in sizes)


def test_plan_examples():
    cfg = DistributedConfig(m=10, r=4, adaptive=True)
    cap = 100
    # n_round = 150 happens for k=150 at the last round
    plan = plan_round(1000, cfg, 4, 150)
    assert plan.n_round == 150 and plan.m_round == -(-150 // cap) == 2
    assert plan.per_partition_target == 75
    fixed = DistributedConfig(m=10, r=4, adaptive=False)
    assert all(plan_round(1000, fixed, i, 150).m_round == 10 for i in range(1, 5))
    assert plan_round(1000, cfg, 4, 100).m_round == 1


@given(st.integers(1, 5000), st.integers(1, 64), st.integers(1, 32), st.floats(0.01, 1.0), st.data())
def test_adaptive_partitions_bounded_and_non_increasing(n0, m, r, gamma, data):
    k = data.draw(st.integers(0, n0))
    cfg = DistributedConfig(m=m, r=r, gamma=gamma, adaptive=True)
    plans = [plan_round(n0, cfg, i, k) for i in range(1, r + 1)]
    assert all(1 <= pl.m_round <= m for pl in plans)
    assert all(a.m_round >= b.m_round for a, b in zip(plans, plans[1:]))
    cap = -(-n0 // m)
    assert all(pl.m_round == 1 for pl in plans if pl.n_round <= cap)


def test_partition_examples():
    nodes = np.arange(10, dtype=np.uint64)
    rng = np.random.default_rng(0)
    assert random_partition(nodes, 1, rng)[0].tolist() == nodes.tolist()
    assert sorted(len(p) for p in random_partition(nodes, 3, rng)) == [3, 3, 4]


@given(st.lists(st.integers(0, 2**63), unique=True, max_size=200), st.integers(1, 20), st.integers(0, 2**32))
def test_partition_is_a_balanced_cover(nodes, m, seed):
    nodes = np.array(nodes, dtype=np.uint64)
    parts = random_partition(nodes, m, np.random.default_rng(seed))
    joined = np.concatenate(parts) if parts else np.empty(0, np.uint64)
    assert sorted(joined.tolist()) == sorted(nodes.tolist())
    sizes = [len(p) for p in parts]
    assert max(sizes) - min(sizes) <= 1
    again = random_partition(nodes, m, np.random.default_rng(seed))
    assert all(np.array_equal(a, b) for a, b in zip(parts, again))


def test_single_machine_equals_greedy(rng):
    for _ in range(30):
        n = int(rng.integers(1, 40))
        g, u = random_instance(rng, n)
        k = int(rng.integers(0, n + 1))
        for r in (1, 3):
            sol = distributed_select(None, g, u, P, k, DistributedConfig(m=1, r=r, seed=int(rng.integers(99))))
            assert sol == greedy_select(None, g, u, P, k)


def test_result_size_is_k(rng):
    for _ in range(200):
        n = int(rng.integers(1, 60))
        g, u = random_instance(rng, n, edge_prob=0.2)
        k = int(rng.integers(0, n + 1))
        cfg = DistributedConfig(m=int(rng.integers(1, 9)), r=int(rng.integers(1, 6)),
                                gamma=float(rng.uniform(0.05, 1)), adaptive=bool(rng.integers(2)),
                                seed=int(rng.integers(1 << 30)))
        assert distributed_select(None, g, u, P, k, cfg).k == k


def test_workers_do_not_change_the_result(rng):
    g, u = random_instance(rng, 300, edge_prob=0.05)
    cfg = dict(m=8, r=4, adaptive=False, seed=9)
    base = distributed_select(None, g, u, P, 30, DistributedConfig(**cfg))
    for w in (4, 16):
        assert distributed_select(None, g, u, P, 30, DistributedConfig(workers=w, **cfg)).order == base.order


def test_adversarial_first_round_plants_solution(rng):
    g, u = random_instance(rng, 60, edge_prob=0.1)
    central = greedy_select(None, g, u, P, 6)
    cfg = DistributedConfig(m=4, r=1, adaptive=False, adversarial_first_round=central, seed=3)
    tel = []
    sol = distributed_select(None, g, u, P, 6, cfg, tel)
    assert sol.k == 6 and tel[0].m_round == 4
    # with one round and a planted partition the central nodes compete only with each other
    assert set(central.as_set()) & sol.as_set()


def test_telemetry_rows(rng):
    g, u = random_instance(rng, 100, edge_prob=0.05)
    tel = []
    sol = distributed_select(None, g, u, P, 10, DistributedConfig(m=4, r=3, seed=1), tel)
    assert [t.round for t in tel] == [1, 2, 3]
    assert tel[-1].n_round == 10 and tel[-1].union_size >= 10
    if tel[-1].union_size == 10:
        assert tel[-1].score == objective_score(sol, g, u, P)


def test_infeasible_and_bad_config(rng):
    g, u = random_instance(rng, 5)
    with pytest.raises(InfeasibleError):
        distributed_select(None, g, u, P, 6, DistributedConfig())
    for kw in (dict(m=0), dict(r=0), dict(gamma=0.0), dict(gamma=1.5)):
        with pytest.raises(ValueError):
            DistributedConfig(**kw)


def test_normalize_examples():
    assert normalize_scores([8.0, 0.0, 10.0], 10.0) == [80.0, 0.0, 100.0]
    assert normalize_scores([10.0], 10.0) == [100.0]
    assert normalize_scores([10.5, 9.0], 10.0)[0] > 100.0
    assert normalize_scores([12.0, 13.0], 10.0) == [100.0, 100.0]
    with pytest.raises(ValueError):
        normalize_scores([], 1.0)


def test_solution_order_matches_members(rng):
    g, u = random_instance(rng, 80, edge_prob=0.05)
    sol = distributed_select(None, g, u, P, 12, DistributedConfig(m=3, r=2, seed=4))
    assert sorted(sol.order) == sol.members.tolist()
    assert isinstance(sol, Solution)
