"""Domain types and the pairwise submodular objective.

The objective over a subset ``S`` is::

    f(S) = alpha * sum_{v in S} (u(v) + delta) - beta * sum_{{a, b} in E, a, b in S} s(a, b)

Every reduction in this module runs in ascending node-id order (a left fold,
never pairwise summation) so that scores are bit-reproducible and can be
matched exactly by the sharded engine in :mod:`pairsub.dataflow`.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

log = logging.getLogger(__name__)

ID_DTYPE = np.uint64


class PairsubError(Exception):
    """Base class for library errors."""


class UnknownNodeError(PairsubError, KeyError):
    def __init__(self, node, where="graph"):
        self.node = node
        super().__init__(f"node {node} not present in {where}")

    def __str__(self):
        return self.args[0]


class MissingUtilityError(PairsubError, KeyError):
    def __init__(self, node):
        self.node = node
        super().__init__(f"no utility entry for node {node}")

    def __str__(self):
        return self.args[0]


class GraphFormatError(PairsubError, ValueError):
    pass


def as_ids(values) -> np.ndarray:
    arr = np.asarray(values)
    if arr.dtype.kind in "fO" and isinstance(values, (list, tuple)):
        # python ints above 2**63 make numpy fall back to float or object
        if not all(isinstance(v, (int, np.integer)) for v in values):
            raise ValueError("node ids must be non-negative integers")
        try:
            arr = np.array(values, dtype=ID_DTYPE)
        except (OverflowError, TypeError, ValueError):
            raise ValueError("node ids must be non-negative integers") from None
    if arr.size == 0:
        return np.empty(0, dtype=ID_DTYPE)
    if arr.dtype.kind == "f" or (arr.dtype.kind == "i" and arr.min() < 0):
        raise ValueError("node ids must be non-negative integers")
    return arr.astype(ID_DTYPE, copy=False).ravel()


def sequential_sum(values: np.ndarray, start: float = 0.0) -> float:
    """Left fold ``((start + v0) + v1) + ...``; deliberately not pairwise."""
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        return float(start)
    acc = np.add.accumulate(np.concatenate(([start], values)))
    return float(acc[-1])


def grouped_fold(groups: np.ndarray, values: np.ndarray, n_groups: int) -> np.ndarray:
    """Per-group left fold in input order (``np.bincount`` accumulates sequentially)."""
    if len(groups) == 0:
        return np.zeros(n_groups, dtype=np.float64)
    return np.bincount(groups, weights=values, minlength=n_groups)


@dataclass(frozen=True)
class ObjectiveParams:
    alpha: float
    beta: float
    delta_offset: float = 0.0

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError("alpha must be > 0")
        if self.beta < 0:
            raise ValueError("beta must be >= 0")
        if self.delta_offset < 0:
            raise ValueError("delta_offset must be >= 0")

    @classmethod
    def balanced(cls, alpha: float, delta_offset: float = 0.0) -> "ObjectiveParams":
        """Parameters with ``beta = 1 - alpha``."""
        if not 0 < alpha <= 1:
            raise ValueError("alpha must lie in (0, 1]")
        return cls(alpha, 1.0 - alpha, delta_offset)

    @property
    def ratio(self) -> float:
        return self.beta / self.alpha

    def with_offset(self, delta: float) -> "ObjectiveParams":
        return ObjectiveParams(self.alpha, self.beta, delta)


class NeighborGraph:
    """Symmetric weighted adjacency in CSR form over dense positions.

    Node ids are arbitrary uint64 values kept sorted in ``ids``; ``indices``
    holds dense positions and every row is sorted ascending, which makes the
    neighbor order identical to ascending neighbor id.
    """

    def __init__(self, ids, indptr, indices, weights, *, validate=True):
        self.ids = as_ids(ids)
        self.indptr = np.asarray(indptr, dtype=np.int64)
        self.indices = np.asarray(indices, dtype=np.int64)
        self.weights = np.asarray(weights, dtype=np.float64)
        if validate:
            self._validate()
        for arr in (self.ids, self.indptr, self.indices, self.weights):
            arr.setflags(write=False)

    def _validate(self):
        n = len(self.ids)
        if n and np.any(np.diff(self.ids.astype(np.uint64)) == 0):
            raise GraphFormatError("duplicate node ids")
        if n > 1 and np.any(self.ids[1:] < self.ids[:-1]):
            raise GraphFormatError("node ids must be sorted")
        if len(self.indptr) != n + 1 or self.indptr[0] != 0 or self.indptr[-1] != len(self.indices):
            raise GraphFormatError("inconsistent indptr")
        if len(self.weights) != len(self.indices):
            raise GraphFormatError("weights and indices differ in length")
        if not np.all(np.isfinite(self.weights)) or np.any(self.weights < 0) or np.any(self.weights > 1):
            raise GraphFormatError("similarities must lie in [0, 1]")
        rows = np.repeat(np.arange(n, dtype=np.int64), np.diff(self.indptr))
        if np.any(rows == self.indices):
            raise GraphFormatError("self-loop")
        if len(self.indices):
            if self.indices.min() < 0 or self.indices.max() >= n:
                raise GraphFormatError("neighbor index out of range")
            same_row = rows[1:] == rows[:-1]
            if np.any(same_row & (self.indices[1:] <= self.indices[:-1])):
                raise GraphFormatError("rows must be sorted without duplicate neighbors")
        fwd = np.lexsort((self.indices, rows))
        rev = np.lexsort((rows, self.indices))
        if not (np.array_equal(rows[fwd], self.indices[rev])
                and np.array_equal(self.indices[fwd], rows[rev])
                and np.array_equal(self.weights[fwd], self.weights[rev])):
            raise GraphFormatError("graph is not symmetric")

    @classmethod
    def from_edges(cls, src, dst, sim, nodes=None) -> "NeighborGraph":
        """Build from directed edge rows; both directions must be listed.

        Negative similarities are clamped to 0 (with a logged count); values
        above 1 and non-finite values are rejected.
        """
        src, dst = as_ids(src), as_ids(dst)
        sim = np.asarray(sim, dtype=np.float64).ravel().copy()
        if not (len(src) == len(dst) == len(sim)):
            raise GraphFormatError("edge arrays differ in length")
        if not np.all(np.isfinite(sim)):
            raise GraphFormatError("non-finite similarity")
        if np.any(sim > 1):
            raise GraphFormatError("similarity above 1")
        neg = sim < 0
        if neg.any():
            log.warning("clamped %d negative similarities to 0", int(neg.sum()))
            sim[neg] = 0.0
        all_ids = np.concatenate([src, dst] + ([as_ids(nodes)] if nodes is not None else []))
        ids = np.unique(all_ids)
        s = np.searchsorted(ids, src)
        d = np.searchsorted(ids, dst)
        order = np.lexsort((d, s))
        s, d, sim = s[order], d[order], sim[order]
        if len(s) > 1 and np.any((s[1:] == s[:-1]) & (d[1:] == d[:-1])):
            raise GraphFormatError("duplicate directed edge")
        indptr = np.zeros(len(ids) + 1, dtype=np.int64)
        np.cumsum(np.bincount(s, minlength=len(ids)), out=indptr[1:])
        return cls(ids, indptr, d, sim)

    @classmethod
    def empty(cls, nodes=()) -> "NeighborGraph":
        ids = np.unique(as_ids(nodes))
        return cls(ids, np.zeros(len(ids) + 1, dtype=np.int64), [], [])

    def __len__(self):
        return len(self.ids)

    @property
    def edge_count(self) -> int:
        """Number of undirected edges."""
        return len(self.indices) // 2

    @property
    def degrees(self) -> np.ndarray:
        return np.diff(self.indptr)

    def row_of_edges(self) -> np.ndarray:
        return np.repeat(np.arange(len(self.ids), dtype=np.int64), self.degrees)

    def weighted_degrees(self) -> np.ndarray:
        return grouped_fold(self.row_of_edges(), self.weights, len(self.ids))

    def index_of(self, node_ids, where="graph") -> np.ndarray:
        q = as_ids(node_ids)
        pos = np.searchsorted(self.ids, q)
        pos_c = np.minimum(pos, max(len(self.ids) - 1, 0))
        bad = (pos >= len(self.ids)) | (self.ids[pos_c] != q) if len(self.ids) else np.ones(len(q), bool)
        if np.any(bad):
            raise UnknownNodeError(int(q[np.argmax(bad)]), where)
        return pos.astype(np.int64)

    def edges_of(self, rows: np.ndarray):
        """CSR edge positions of ``rows``: returns (owner position in rows, edge index)."""
        rows = np.asarray(rows, dtype=np.int64)
        starts = self.indptr[rows]
        counts = self.indptr[rows + 1] - starts
        owner = np.repeat(np.arange(len(rows), dtype=np.int64), counts)
        offsets = np.arange(counts.sum(), dtype=np.int64) - np.repeat(np.cumsum(counts) - counts, counts)
        return owner, np.repeat(starts, counts) + offsets

    def neighbors(self, node) -> tuple[np.ndarray, np.ndarray]:
        i = int(self.index_of([node])[0])
        lo, hi = self.indptr[i], self.indptr[i + 1]
        return self.ids[self.indices[lo:hi]], self.weights[lo:hi]

    def directed_edges(self):
        """(src ids, dst ids, sims) sorted by (src, dst)."""
        rows = self.row_of_edges()
        return self.ids[rows], self.ids[self.indices], self.weights.copy()


class UtilityTable:
    """Node id -> utility, stored sorted by id."""

    def __init__(self, ids, values):
        ids = as_ids(ids)
        values = np.asarray(values, dtype=np.float64).ravel()
        if len(ids) != len(values):
            raise ValueError("ids and values differ in length")
        if not np.all(np.isfinite(values)):
            raise ValueError("utilities must be finite")
        order = np.argsort(ids, kind="stable")
        self.ids, self.values = ids[order], values[order]
        if len(self.ids) > 1 and np.any(self.ids[1:] == self.ids[:-1]):
            raise ValueError("duplicate utility entries")
        self.ids.setflags(write=False)
        self.values.setflags(write=False)

    @classmethod
    def from_mapping(cls, mapping: Mapping[int, float]) -> "UtilityTable":
        return cls(list(mapping.keys()), list(mapping.values()))

    def __len__(self):
        return len(self.ids)

    def to_dict(self) -> dict[int, float]:
        return {int(k): float(v) for k, v in zip(self.ids, self.values)}

    def lookup(self, node_ids) -> np.ndarray:
        q = as_ids(node_ids)
        if len(q) == 0:
            return np.empty(0, dtype=np.float64)
        if len(self.ids) == 0:
            raise MissingUtilityError(int(q[0]))
        pos = np.searchsorted(self.ids, q)
        pos_c = np.minimum(pos, len(self.ids) - 1)
        bad = (pos >= len(self.ids)) | (self.ids[pos_c] != q)
        if np.any(bad):
            raise MissingUtilityError(int(q[np.argmax(bad)]))
        return self.values[pos_c]

    def aligned(self, graph: NeighborGraph) -> np.ndarray:
        """Utilities in graph position order; every graph node needs an entry."""
        return self.lookup(graph.ids)


@dataclass(frozen=True)
class Solution:
    members: np.ndarray
    order: tuple = field(default=(), compare=False)

    def __post_init__(self):
        m = np.unique(as_ids(self.members))
        if len(m) != len(as_ids(self.members)):
            raise ValueError("duplicate members")
        m.setflags(write=False)
        object.__setattr__(self, "members", m)

    @classmethod
    def of(cls, members: Iterable[int], order=()) -> "Solution":
        return cls(np.asarray(list(members), dtype=ID_DTYPE), tuple(order))

    @property
    def k(self) -> int:
        return len(self.members)

    def __len__(self):
        return len(self.members)

    def __contains__(self, node):
        i = np.searchsorted(self.members, np.uint64(node))
        return bool(i < len(self.members) and self.members[i] == np.uint64(node))

    def __eq__(self, other):
        return isinstance(other, Solution) and np.array_equal(self.members, other.members)

    def __hash__(self):
        return hash(self.members.tobytes())

    def as_set(self) -> set[int]:
        return {int(x) for x in self.members}


def _member_rows(sol: Solution, g: NeighborGraph) -> np.ndarray:
    return g.index_of(sol.members)


def node_contributions(rows: np.ndarray, g: NeighborGraph, u: UtilityTable, p: ObjectiveParams) -> np.ndarray:
    """Per-member share ``alpha*(u+delta) - (beta*pen)*0.5`` for sorted ``rows``.

    Each member carries half of every in-subset edge at it, so summing the
    shares charges each unordered pair exactly once.
    """
    util = u.lookup(g.ids[rows])
    inside = np.zeros(len(g), dtype=np.float64)
    inside[rows] = 1.0
    owner, e = g.edges_of(rows)
    pen = grouped_fold(owner, g.weights[e] * inside[g.indices[e]], len(rows))
    return p.alpha * (util + p.delta_offset) - (p.beta * pen) * 0.5


def objective_score(sol: Solution, g: NeighborGraph, u: UtilityTable, p: ObjectiveParams) -> float:
    if len(sol) == 0:
        return 0.0
    rows = _member_rows(sol, g)
    return sequential_sum(node_contributions(rows, g, u, p))


def marginal_gain(sol: Solution, v: int, g: NeighborGraph, u: UtilityTable, p: ObjectiveParams) -> float:
    """``f(S + v) - f(S)`` from the neighbors of ``v`` already in ``S``."""
    if v in sol:
        raise ValueError(f"node {v} is already in the solution")
    i = int(g.index_of([v])[0])
    util = float(u.lookup([v])[0])
    lo, hi = g.indptr[i], g.indptr[i + 1]
    nbr_ids = g.ids[g.indices[lo:hi]]
    if len(sol):
        g.index_of(sol.members)
    hit = np.isin(nbr_ids, sol.members)
    pen = sequential_sum(g.weights[lo:hi][hit])
    return p.alpha * (util + p.delta_offset) - p.beta * pen


def monotonicity_offset(g: NeighborGraph, p: ObjectiveParams) -> float:
    """Utility offset that makes the objective monotone non-decreasing."""
    if len(g) == 0 or len(g.indices) == 0:
        return 0.0
    return p.ratio * float(g.weighted_degrees().max())


def center_utilities(raw: UtilityTable) -> UtilityTable:
    if len(raw) == 0:
        raise ValueError("cannot center an empty utility table")
    return UtilityTable(raw.ids, raw.values - raw.values.min())
