import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pairsub.dataflow import BudgetExceeded, DataflowError, MemoryBudget, load_collection
from pairsub.dataflow.records import EDGE4, IDS, STATUS, TRIPLE, HEADER, read_header, schema_dtype

import oracles

ABSENT = 99


def triples(rng, n, keys=1000):
    arr = np.empty(n, dtype=schema_dtype(TRIPLE))
    arr["key"] = rng.integers(0, keys, n)
    arr["src"] = rng.integers(0, 1 << 62, n)
    arr["sim"] = rng.random(n)
    return arr


def in_memory_sort(arr):
    return arr[np.lexsort((arr["sim"], arr["src"], arr["key"]))]


def test_budget_hold_and_peak():
    b = MemoryBudget(100)
    with b.hold(60, "a"):
        with pytest.raises(BudgetExceeded) as err:
            with b.hold(50, "b"):
                pass
        assert err.value.stage == "b"
    assert b.current == 0 and b.peak == 60
    with pytest.raises(ValueError):
        MemoryBudget(0)


def test_shards_round_trip_bit_exactly(engine_factory, rng):
    eng = engine_factory(1 << 20, shard_records=1000)
    arr = triples(rng, 3500)
    arr["sim"][:3] = [np.nextafter(0, 1), 1.0, 0.1 + 0.2]
    coll = eng.from_array("t", TRIPLE, arr)
    assert len(coll.shards) == 4 and coll.count == 3500
    assert coll.read_all().tobytes() == arr.tobytes()
    schema, count = read_header(coll.shards[0])
    assert schema == TRIPLE and count == 1000
    assert coll.shards[0].stat().st_size == HEADER.size + 1000 * 24
    again = load_collection(eng.run_dir, "t", False)
    assert again.read_all().tobytes() == arr.tobytes()


def test_manifest_lists_collections(engine_factory, rng):
    eng = engine_factory(1 << 20)
    eng.from_array("a", IDS, np.zeros(3, dtype=schema_dtype(IDS)), sorted=True)
    lines = (eng.run_dir / "MANIFEST").read_text().splitlines()
    assert lines == ["a\t1\t3\t1"]
    assert eng.load("a").count == 3


def test_empty_collection_keeps_schema(engine_factory):
    eng = engine_factory(1 << 20)
    coll = eng.register(eng.writer("e", STATUS, True).close())
    assert coll.count == 0 and read_header(coll.shards[0]) == (STATUS, 0)
    assert eng.external_sort(coll).count == 0


def test_sorted_writer_rejects_unsorted(engine_factory):
    eng = engine_factory(1 << 20)
    w = eng.writer("s", IDS, True)
    w.write(np.array([(3,), (5,)], dtype=schema_dtype(IDS)))
    with pytest.raises(DataflowError):
        w.write(np.array([(4,)], dtype=schema_dtype(IDS)))


def test_sorted_shards_do_not_split_keys(engine_factory):
    eng = engine_factory(1 << 20, shard_records=4)
    arr = np.zeros(12, dtype=schema_dtype(STATUS))
    arr["id"] = [1, 1, 1, 2, 2, 2, 2, 2, 3, 4, 4, 5]
    coll = eng.from_array("s", STATUS, arr, sorted=True)
    keys = [set(coll.read_shard(i)["id"].tolist()) for i in range(len(coll.shards))]
    for a, b in zip(keys, keys[1:]):
        assert max(a) < min(b)


def test_external_sort_large_under_tight_budget(engine_factory, rng):
    arr = triples(rng, 1_000_000, keys=1 << 40)
    eng = engine_factory(arr.nbytes // 20, shard_records=1 << 16)
    coll = eng.from_array("big", TRIPLE, arr)
    out = eng.external_sort(coll)
    assert out.sorted and out.read_all().tobytes() == in_memory_sort(arr).tobytes()
    assert eng.budget.peak <= eng.budget.max_resident_bytes


def test_sort_trivial_inputs(engine_factory, rng):
    eng = engine_factory(1 << 16, shard_records=500)
    arr = in_memory_sort(triples(rng, 5000))
    assert eng.external_sort(eng.from_array("a", TRIPLE, arr)).read_all().tobytes() == arr.tobytes()
    rev = arr[::-1].copy()
    assert eng.external_sort(eng.from_array("b", TRIPLE, rev)).read_all().tobytes() == arr.tobytes()


def test_sort_needs_some_memory(engine_factory, rng):
    eng = engine_factory(64)
    coll = eng.from_array("a", TRIPLE, triples(rng, 100))
    with pytest.raises(BudgetExceeded):
        eng.external_sort(coll)


def test_sort_independent_of_workers(engine_factory, rng):
    arr = triples(rng, 50_000, keys=50)
    outs = []
    for workers in (1, 4, 16):
        eng = engine_factory(arr.nbytes // 8, workers=workers, shard_records=3000)
        outs.append(eng.external_sort(eng.from_array("x", TRIPLE, arr)).read_all().tobytes())
    assert outs[0] == outs[1] == outs[2]


def _status(ids, flags):
    arr = np.zeros(len(ids), dtype=schema_dtype(STATUS))
    arr["id"], arr["flag"] = ids, flags
    return arr


def _combine(l, r, present):
    out = np.empty(len(l), dtype=schema_dtype(EDGE4))
    out["key"], out["src"], out["sim"] = l["key"], l["src"], l["sim"]
    out["flag"] = np.where(present, r["flag"], ABSENT)
    return out


def _join(eng, left, right, kind):
    lc = eng.external_sort(eng.from_array(eng.temp_name("l"), TRIPLE, left))
    rc = eng.external_sort(eng.from_array(eng.temp_name("r"), STATUS, right))
    combine = _combine if kind in ("inner", "left") else None
    out = eng.merge_join(lc, rc, kind, eng.temp_name("j"), EDGE4 if combine else TRIPLE, combine)
    rows = out.read_all()
    if combine:
        return sorted([(int(a), (int(b), float(c)), None if f == ABSENT else int(f))
                       for a, b, c, f in rows.tolist()], key=repr)
    return sorted([(int(a), (int(b), float(c))) for a, b, c in rows.tolist()], key=repr)


def _oracle_rows(left, right):
    return ([(int(k), (int(s), float(x))) for k, s, x in left.tolist()],
            [(int(k), int(f)) for k, f in right.tolist()])


@pytest.mark.parametrize("kind", ["inner", "left", "exists", "not_exists"])
def test_join_matches_nested_loop(engine_factory, rng, kind):
    left = triples(rng, 3000, keys=400)
    right = _status(rng.integers(0, 400, 1500), rng.integers(0, 3, 1500))
    eng = engine_factory(40_000, shard_records=700)
    got = _join(eng, left, right, kind)
    assert got == oracles.nested_loop_join(*_oracle_rows(left, right), kind)
    assert eng.budget.peak <= eng.budget.max_resident_bytes


def test_join_trivial_cases(engine_factory, rng):
    eng = engine_factory(1 << 20)
    left = triples(rng, 50, keys=10)
    right = _status(np.arange(100, 110), np.ones(10))
    assert _join(eng, left, right, "inner") == []
    got = _join(eng, left, right[:0], "left")
    assert len(got) == 50 and all(row[2] is None for row in got)


def test_join_heavy_key_stays_in_budget(engine_factory, rng):
    # one key with 2000 x 2000 partners exceeds any single buffer
    left = triples(rng, 2000, keys=1)
    right = _status(np.zeros(2000), np.arange(2000))
    eng = engine_factory(600_000)
    lc = eng.external_sort(eng.from_array("l", TRIPLE, left))
    rc = eng.external_sort(eng.from_array("r", STATUS, right))
    out = eng.merge_join(lc, rc, "inner", "j", EDGE4, _combine)
    assert out.count == 4_000_000
    assert eng.budget.peak <= eng.budget.max_resident_bytes


def test_join_requires_sorted_inputs(engine_factory, rng):
    eng = engine_factory(1 << 20)
    lc = eng.from_array("l", TRIPLE, triples(rng, 10))
    rc = eng.from_array("r", STATUS, _status([1], [1]), sorted=True)
    with pytest.raises(DataflowError):
        eng.merge_join(lc, rc, "exists", "j", TRIPLE, None)
    with pytest.raises(ValueError):
        eng.merge_join(rc, rc, "outer", "j", TRIPLE, None)


@settings(max_examples=30)
@given(st.lists(st.tuples(st.integers(0, 30), st.integers(0, 5)), max_size=200),
       st.lists(st.tuples(st.integers(0, 30), st.integers(0, 3)), max_size=100),
       st.sampled_from(["inner", "left", "exists", "not_exists"]), st.integers(1, 64))
def test_join_property(tmp_path_factory, l, r, kind, shard):
    from pairsub.dataflow import Engine
    eng = Engine(tmp_path_factory.mktemp("j"), 20_000, shard_records=shard)
    left = np.zeros(len(l), dtype=schema_dtype(TRIPLE))
    if l:
        left["key"], left["src"] = zip(*l)
    right = _status([k for k, _ in r], [f for _, f in r])
    assert _join(eng, left, right, kind) == oracles.nested_loop_join(*_oracle_rows(left, right), kind)


def test_record_wise_map_independent_of_workers(engine_factory, rng):
    arr = triples(rng, 20_000)
    res = []

    def flip(c, shard, offset):
        out = c.copy()
        out["key"], out["src"] = c["src"], c["key"]
        return out

    for w in (1, 4, 16):
        eng = engine_factory(100_000, workers=w, shard_records=1500)
        coll = eng.from_array("x", TRIPLE, arr)
        res.append(eng.map(coll, flip, "y", TRIPLE).read_all().tobytes())
    assert res[0] == res[1] == res[2]


def test_rename_and_drop(engine_factory):
    eng = engine_factory(1 << 20)
    c = eng.from_array("a", IDS, np.zeros(2, dtype=schema_dtype(IDS)), sorted=True)
    c = eng.rename(c, "b")
    assert eng.load("b").count == 2 and not (eng.run_dir / "a").exists()
    eng.drop(c)
    with pytest.raises(DataflowError):
        eng.load("b")
