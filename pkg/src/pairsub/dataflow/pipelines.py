"""Join-based pipelines over sharded collections.

The graph is ingested as directed adjacency records ``(node, neighbor, sim)``
sorted by node, so each node's neighbor list is one key group. Fanning out
re-keys every record by the neighbor, which lets a node's neighborhood be
aggregated by joining on the neighbor id instead of random lookups.

Every per-node reduction folds its edges in ascending neighbor id and every
total is summed in ascending node id, so results are bit-identical to the
in-memory modules.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from ..bounding import EXACT, SamplingPolicy, overshoot_drops, run_bounding, sample_mask
from ..core import (
    MissingUtilityError,
    NeighborGraph,
    ObjectiveParams,
    UtilityTable,
    as_ids,
    grouped_fold,
    sequential_sum,
)
from ..greedy import InfeasibleError
from .engine import Engine
from .records import (
    ADJ,
    EDGE4,
    IDS,
    NODE_VALUE,
    STATUS,
    TRIPLE,
    VALUE_ID,
    DataflowError,
    ShardedCollection,
    schema_dtype,
)

_GROWN, _REMAINING = 1, 0


def _records(schema: int, n: int, **cols) -> np.ndarray:
    out = np.empty(n, dtype=schema_dtype(schema))
    for name, col in cols.items():
        out[name] = col
    return out


# -- ingestion -------------------------------------------------------------------

def ingest_ids(engine: Engine, ids, name: str) -> ShardedCollection:
    ids = np.unique(as_ids(ids))
    return engine.from_array(name, IDS, _records(IDS, len(ids), id=ids), sorted=True)


def ingest_utilities(engine: Engine, u: UtilityTable, name: str = "utilities") -> ShardedCollection:
    return engine.from_array(name, NODE_VALUE, _records(NODE_VALUE, len(u), id=u.ids, value=u.values),
                             sorted=True)


def ingest_graph(engine: Engine, g: NeighborGraph, name: str = "graph") -> ShardedCollection:
    src, dst, sim = g.directed_edges()
    return engine.from_array(name, ADJ, _records(ADJ, len(src), node=src, neighbor=dst, sim=sim),
                             sorted=True)


def read_values(coll: ShardedCollection) -> UtilityTable:
    """Small-result helper: a NODE_VALUE collection as an in-memory table."""
    arr = coll.read_all()
    return UtilityTable(arr["id"], arr["value"])


# -- building blocks -------------------------------------------------------------

def fan_out_edges(engine: Engine, graph: ShardedCollection, name: str | None = None) -> ShardedCollection:
    """One ``(key=neighbor, src=node, sim)`` triple per adjacency record, sorted by key."""
    if graph.schema != ADJ:
        raise DataflowError(f"{graph.name}: expected adjacency records")

    def fan(chunk, shard, offset):
        bad = (chunk["node"] == chunk["neighbor"]) | ~(chunk["sim"] >= 0) | (chunk["sim"] > 1)
        if bad.any():
            j = int(np.argmax(bad))
            raise DataflowError(f"{graph.name}: malformed record at shard {shard} offset {offset + j}: "
                                f"node={chunk['node'][j]} neighbor={chunk['neighbor'][j]} "
                                f"sim={chunk['sim'][j]!r}")
        return _records(TRIPLE, len(chunk), key=chunk["neighbor"], src=chunk["node"], sim=chunk["sim"])

    raw = engine.map(graph, fan, engine.temp_name("fan"), TRIPLE, stage="fan_out")
    return engine.external_sort(raw, name, stage="fan_out.sort", drop_input=True)


def _node_values(engine, nodes: ShardedCollection, utilities: ShardedCollection, stage) -> ShardedCollection:
    """``nodes`` joined with their utilities; a missing utility is an error."""
    def combine(l, r, present):
        if not present.all():
            raise MissingUtilityError(int(l["id"][np.argmin(present)]))
        return _records(NODE_VALUE, len(l), id=l["id"], value=r["value"])

    if nodes.schema == NODE_VALUE:
        return nodes
    return engine.merge_join(nodes, utilities, "left", engine.temp_name("nodes"), NODE_VALUE, combine,
                             out_sorted=True, stage=stage)


def _status(engine, solution, unassigned, stage) -> ShardedCollection:
    w = engine.writer(engine.temp_name("status"), STATUS, True)
    for sol, rem in engine.cogroup(solution, unassigned, stage):
        both = np.intersect1d(sol["id"], rem["id"])
        if len(both):
            raise DataflowError(f"{stage}: node {int(both[0])} is both in the solution and unassigned")
        ids = np.concatenate([sol["id"], rem["id"]])
        flags = np.concatenate([np.full(len(sol), _GROWN, np.uint64), np.full(len(rem), _REMAINING, np.uint64)])
        order = np.argsort(ids, kind="stable")
        w.write(_records(STATUS, len(ids), id=ids[order], flag=flags[order]))
    return engine.register(w.close())


def _reduce(engine, nodes, edges, params, name, stage, take_fn):
    """Per node ``u + delta - ratio * sum(sim)`` over the edges ``take_fn`` keeps.

    ``edges`` is keyed by the center node and sorted, so each group folds in
    ascending neighbor order. Edges of nodes absent from ``nodes`` are ignored.
    """
    w = engine.writer(name, NODE_VALUE, True)
    for lpart, rpart in engine.cogroup(nodes, edges, stage, share=0.5):
        if not len(lpart):
            continue
        owner = np.searchsorted(lpart["id"], rpart["key"])
        hit = owner < len(lpart)
        hit[hit] = lpart["id"][owner[hit]] == rpart["key"][hit]
        if not hit.all():
            rpart, owner = rpart[hit], owner[hit]
        take = take_fn(lpart, rpart, owner)
        pen = grouped_fold(owner, rpart["sim"] * take, len(lpart))
        base = lpart["value"] + params.delta_offset
        w.write(_records(NODE_VALUE, len(lpart), id=lpart["id"], value=base - params.ratio * pen))
    return engine.register(w.close())


def _rekey(engine, triples, stage) -> ShardedCollection:
    """Swap key and src of triples and sort again."""
    flipped = engine.map(triples, lambda c, i, o: _records(TRIPLE, len(c), key=c["src"], src=c["key"], sim=c["sim"]),
                         engine.temp_name("flip"), TRIPLE, stage=stage)
    return engine.external_sort(flipped, stage=stage + ".sort", drop_input=True)


# -- utilities -------------------------------------------------------------------

def min_utility_pipeline(engine: Engine, fanned: ShardedCollection, solution: ShardedCollection,
                         unassigned: ShardedCollection, utilities: ShardedCollection,
                         params: ObjectiveParams, policy: SamplingPolicy = EXACT, step: int = 0,
                         name: str | None = None) -> ShardedCollection:
    """Minimum (or, under a sampling policy, expected) utility of every unassigned node.

    Edges to nodes that are neither in the solution nor unassigned drop out
    in the first join; the survivors are re-keyed by their center, filtered
    to unassigned centers and reduced.
    """
    stage = "min_utility"
    status = _status(engine, solution, unassigned, stage + ".status")

    def classify(l, r, present):
        return _records(EDGE4, len(l), key=l["src"], src=l["key"], sim=l["sim"], flag=r["flag"])

    e4 = engine.merge_join(fanned, status, "inner", engine.temp_name("edge4"), EDGE4, classify,
                           stage=stage + ".classify")
    engine.drop(status)
    e4 = engine.external_sort(e4, stage=stage + ".sort", drop_input=True)
    live = engine.merge_join(e4, unassigned, "exists", engine.temp_name("live"), EDGE4, None,
                             out_sorted=True, stage=stage + ".filter")
    engine.drop(e4)
    nodes = _node_values(engine, unassigned, utilities, stage + ".utilities")

    def take(lpart, rpart, owner):
        in_grown = rpart["flag"] == _GROWN
        in_rem = rpart["flag"] == _REMAINING
        if policy.exact:
            return in_grown | in_rem
        return in_grown | sample_mask(owner, rpart["key"], rpart["src"], rpart["sim"], in_grown, in_rem,
                                      policy, step, len(lpart))

    out = _reduce(engine, nodes, live, params, name or engine.temp_name("umin"), stage + ".reduce", take)
    engine.drop(live, nodes)
    return out


def max_utility_pipeline(engine: Engine, fanned: ShardedCollection, solution: ShardedCollection,
                         utilities: ShardedCollection, params: ObjectiveParams,
                         restrict: ShardedCollection | None = None, name: str | None = None) -> ShardedCollection:
    """Maximum utility: only neighbors in the solution are charged.

    Covers every node of ``utilities`` unless ``restrict`` (sorted ids)
    narrows the output.
    """
    stage = "max_utility"
    hits = engine.merge_join(fanned, solution, "exists", engine.temp_name("hits"), TRIPLE, None,
                             out_sorted=True, stage=stage + ".join")
    by_center = _rekey(engine, hits, stage + ".rekey")
    engine.drop(hits)
    nodes = utilities if restrict is None else _node_values(engine, restrict, utilities, stage + ".utilities")
    out = _reduce(engine, nodes, by_center, params, name or engine.temp_name("umax"), stage + ".reduce",
                  lambda l, r, o: np.ones(len(r), dtype=bool))
    engine.drop(by_center)
    if nodes is not utilities:
        engine.drop(nodes)
    return out


def score_pipeline(engine: Engine, fanned: ShardedCollection, solution: ShardedCollection,
                   utilities: ShardedCollection, params: ObjectiveParams) -> float:
    """Objective value of a streamed solution.

    Each member is charged half of every in-solution edge at it, so the two
    directed copies of an edge add up to one penalty.
    """
    stage = "score"
    hits = engine.merge_join(fanned, solution, "exists", engine.temp_name("hits"), TRIPLE, None,
                             out_sorted=True, stage=stage + ".join")
    by_center = _rekey(engine, hits, stage + ".rekey")
    engine.drop(hits)
    inner = engine.merge_join(by_center, solution, "exists", engine.temp_name("inner"), TRIPLE, None,
                              out_sorted=True, stage=stage + ".filter")
    engine.drop(by_center)
    nodes = _node_values(engine, solution, utilities, stage + ".utilities")
    total = 0.0
    for lpart, rpart in engine.cogroup(nodes, inner, stage + ".reduce", share=0.5):
        if not len(lpart):
            continue
        owner = np.searchsorted(lpart["id"], rpart["key"])
        pen = grouped_fold(owner, rpart["sim"], len(lpart))
        share = params.alpha * (lpart["value"] + params.delta_offset) - (params.beta * pen) * 0.5
        total = sequential_sum(share, start=total)
    engine.drop(inner, nodes)
    return total


def kth_largest_pipeline(engine: Engine, values: ShardedCollection, k: int, stage: str = "threshold") -> float:
    """k-th largest value via external sort and a positional scan; -inf if too few."""
    n = values.count
    if k <= 0 or n <= k:
        return -np.inf
    flipped = engine.map(values, lambda c, i, o: _records(VALUE_ID, len(c), value=c["value"], id=c["id"]),
                         engine.temp_name("byvalue"), VALUE_ID, stage=stage)
    ordered = engine.external_sort(flipped, stage=stage + ".sort", drop_input=True)
    target = n - k
    seen = 0
    result = None
    for chunk in engine.chunks(ordered, engine.chunk_records(ordered.dtype, 0.25), stage + ".scan"):
        if seen + len(chunk) > target:
            result = float(chunk["value"][target - seen])
            break
        seen += len(chunk)
    engine.drop(ordered)
    return result


# -- bounding ------------------------------------------------------------------------

@dataclass(frozen=True)
class ShardedBoundingState:
    grown: ShardedCollection
    remaining: ShardedCollection
    excluded: ShardedCollection
    k_target: int
    grow_rounds: int = 0
    shrink_rounds: int = 0

    @property
    def residual_k(self) -> int:
        return self.k_target - self.grown.count

    @property
    def steps(self) -> int:
        return self.grow_rounds + self.shrink_rounds

    def counts(self) -> tuple[int, int, int]:
        return self.grown.count, self.remaining.count, self.excluded.count


def _split(engine, values: ShardedCollection, keep_fn, stage):
    """Ids of ``values`` partitioned by ``keep_fn(value)`` into (kept, rest)."""
    kept = engine.writer(engine.temp_name("kept"), IDS, True)
    rest = engine.writer(engine.temp_name("rest"), IDS, True)
    for chunk in engine.chunks(values, engine.chunk_records(values.dtype, 0.25), stage):
        mask = keep_fn(chunk["value"])
        kept.write(_records(IDS, int(mask.sum()), id=chunk["id"][mask]))
        rest.write(_records(IDS, int((~mask).sum()), id=chunk["id"][~mask]))
    return engine.register(kept.close()), engine.register(rest.close())


def _union(engine, a: ShardedCollection, b: ShardedCollection, stage) -> ShardedCollection:
    w = engine.writer(engine.temp_name("union"), IDS, True)
    for x, y in engine.cogroup(a, b, stage):
        ids = np.concatenate([x["id"], y["id"]])
        w.write(_records(IDS, len(ids), id=np.sort(ids)))
    return engine.register(w.close())


def _empty_ids(engine) -> ShardedCollection:
    return engine.register(engine.writer(engine.temp_name("empty"), IDS, True).close())


@dataclass
class BoundingRun:
    engine: Engine
    fanned: ShardedCollection
    utilities: ShardedCollection
    params: ObjectiveParams
    policy: SamplingPolicy

    def _bounds(self, st: ShardedBoundingState):
        lower = min_utility_pipeline(self.engine, self.fanned, st.grown, st.remaining, self.utilities,
                                     self.params, self.policy, st.steps)
        upper = max_utility_pipeline(self.engine, self.fanned, st.grown, self.utilities, self.params,
                                     restrict=st.remaining)
        return lower, upper

    def grow(self, st: ShardedBoundingState) -> ShardedBoundingState:
        residual = st.residual_k
        if residual <= 0:
            return st
        e = self.engine
        lower, upper = self._bounds(st)
        threshold = kth_largest_pipeline(e, upper, residual, "grow.threshold")
        new, rest = _split(e, lower, lambda v: v > threshold, "grow.split")
        grown = _union(e, st.grown, new, "grow.union")
        e.drop(lower, upper, new, st.grown, st.remaining)
        return replace(st, grown=grown, remaining=rest, grow_rounds=st.grow_rounds + 1)

    def shrink(self, st: ShardedBoundingState) -> ShardedBoundingState:
        e = self.engine
        if st.residual_k <= 0:
            excluded = _union(e, st.excluded, st.remaining, "shrink.union")
            e.drop(st.excluded, st.remaining)
            return replace(st, remaining=_empty_ids(e), excluded=excluded, shrink_rounds=st.shrink_rounds + 1)
        lower, upper = self._bounds(st)
        threshold = kth_largest_pipeline(e, lower, st.residual_k, "shrink.threshold")
        dropped, rest = _split(e, upper, lambda v: v < threshold, "shrink.split")
        excluded = _union(e, st.excluded, dropped, "shrink.union")
        e.drop(lower, upper, dropped, st.excluded, st.remaining)
        return replace(st, remaining=rest, excluded=excluded, shrink_rounds=st.shrink_rounds + 1)

    def finalize(self, st: ShardedBoundingState) -> ShardedBoundingState:
        e = self.engine
        if st.residual_k < 0:
            drops = overshoot_drops(st.grown.count, st.k_target, self.policy.seed)
            kept = e.writer(e.temp_name("kept"), IDS, True)
            gone = e.writer(e.temp_name("gone"), IDS, True)
            offset = 0
            for chunk in e.chunks(st.grown, e.chunk_records(st.grown.dtype, 0.25), "finalize"):
                mask = np.isin(np.arange(offset, offset + len(chunk)), drops)
                kept.write(chunk[~mask])
                gone.write(chunk[mask])
                offset += len(chunk)
            kept, gone = e.register(kept.close()), e.register(gone.close())
            excluded = _union(e, st.excluded, gone, "finalize.union")
            e.drop(st.grown, st.excluded, gone)
            st = replace(st, grown=kept, excluded=excluded)
        if st.grown.count == st.k_target and st.remaining.count:
            excluded = _union(e, st.excluded, st.remaining, "finalize.union")
            e.drop(st.excluded, st.remaining)
            st = replace(st, remaining=_empty_ids(e), excluded=excluded)
        return st


def bound_pipeline(engine: Engine, ground: ShardedCollection, graph: ShardedCollection,
                   utilities: ShardedCollection, params: ObjectiveParams, k: int,
                   policy: SamplingPolicy = EXACT, prefix: str = "bound") -> ShardedBoundingState:
    """Out-of-core bounding; the result collections are named ``<prefix>.grown`` etc."""
    if k < 0 or k > ground.count:
        raise InfeasibleError(f"k={k} infeasible for ground set size {ground.count}")
    fanned = fan_out_edges(engine, graph)
    remaining = engine.map(ground, lambda c, i, o: c, engine.temp_name("ground"), IDS, out_sorted=True,
                           stage="bound.copy")
    st = ShardedBoundingState(_empty_ids(engine), remaining, _empty_ids(engine), int(k))
    run = BoundingRun(engine, fanned, utilities, params, policy)
    st = run_bounding(st, run.grow, run.shrink)
    st = run.finalize(st)
    engine.drop(fanned)
    return replace(
        st,
        grown=engine.rename(st.grown, f"{prefix}.grown"),
        remaining=engine.rename(st.remaining, f"{prefix}.remaining"),
        excluded=engine.rename(st.excluded, f"{prefix}.excluded"),
    )
