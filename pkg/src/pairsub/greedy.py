"""Centralized greedy selection.

``greedy_select`` is the priority-queue algorithm: every node starts with its
utility as priority, the maximum is popped and each still-queued neighbor is
decreased by ``beta/alpha * s``. ``naive_greedy_select`` recomputes every
marginal gain from scratch and only exists as a test oracle.

Ties on priority go to the smaller node id; the heap orders entries by the
pair ``(priority, -id)`` so this is intrinsic rather than a post-processing
step.
"""

from __future__ import annotations

import numpy as np
from numba import njit

from .core import (
    NeighborGraph,
    ObjectiveParams,
    PairsubError,
    Solution,
    UtilityTable,
    as_ids,
    marginal_gain,
)


class InfeasibleError(PairsubError, ValueError):
    pass


# Heap primitives over dense positions. ``heap`` holds positions, ``pos`` maps
# a position to its heap slot (-1 when absent), ``prio``/``ids`` are indexed by
# position.

@njit(cache=True, nogil=True)
def _before(prio, ids, a, b):
    pa = prio[a]
    pb = prio[b]
    return pa > pb or (pa == pb and ids[a] < ids[b])


@njit(cache=True, nogil=True)
def _sift_up(heap, pos, prio, ids, i):
    v = heap[i]
    while i > 0:
        parent = (i - 1) >> 1
        w = heap[parent]
        if not _before(prio, ids, v, w):
            break
        heap[i] = w
        pos[w] = i
        i = parent
    heap[i] = v
    pos[v] = i


@njit(cache=True, nogil=True)
def _sift_down(heap, pos, prio, ids, i, size):
    v = heap[i]
    while True:
        child = 2 * i + 1
        if child >= size:
            break
        if child + 1 < size and _before(prio, ids, heap[child + 1], heap[child]):
            child += 1
        w = heap[child]
        if not _before(prio, ids, w, v):
            break
        heap[i] = w
        pos[w] = i
        i = child
    heap[i] = v
    pos[v] = i


@njit(cache=True, nogil=True)
def _heapify(heap, pos, prio, ids, size):
    for i in range(size):
        pos[heap[i]] = i
    for i in range(size // 2 - 1, -1, -1):
        _sift_down(heap, pos, prio, ids, i, size)


@njit(cache=True, nogil=True)
def _pop(heap, pos, prio, ids, size):
    top = heap[0]
    pos[top] = -1
    size -= 1
    if size > 0:
        heap[0] = heap[size]
        pos[heap[0]] = 0
        _sift_down(heap, pos, prio, ids, 0, size)
    return top, size


@njit(cache=True, nogil=True)
def _decrease(heap, pos, prio, ids, v, amount, size):
    prio[v] -= amount
    _sift_down(heap, pos, prio, ids, pos[v], size)


@njit(cache=True, nogil=True)
def _greedy_kernel(indptr, indices, weights, ids, base, ratio, members, k, pos, prio):
    m = members.shape[0]
    heap = np.empty(m, dtype=np.int64)
    for j in range(m):
        v = members[j]
        heap[j] = v
        prio[v] = base[v]
    size = m
    _heapify(heap, pos, prio, ids, size)
    out = np.empty(k, dtype=np.int64)
    for t in range(k):
        v, size = _pop(heap, pos, prio, ids, size)
        out[t] = v
        for e in range(indptr[v], indptr[v + 1]):
            w = indices[e]
            if pos[w] >= 0 and weights[e] > 0:
                _decrease(heap, pos, prio, ids, w, ratio * weights[e], size)
    for j in range(size):
        pos[heap[j]] = -1
    return out


class IndexedMaxQueue:
    """Max-priority queue keyed by node id with O(log n) ``decrease_weight_by``."""

    def __init__(self, keys, priorities):
        keys = as_ids(keys)
        self._keys = keys
        self._slot = {int(k): i for i, k in enumerate(keys)}
        if len(self._slot) != len(keys):
            raise ValueError("duplicate keys")
        self._prio = np.asarray(priorities, dtype=np.float64).copy()
        self._pos = np.full(len(keys), -1, dtype=np.int64)
        self._heap = np.arange(len(keys), dtype=np.int64)
        self._size = len(keys)
        _heapify(self._heap, self._pos, self._prio, self._keys, self._size)

    def __len__(self):
        return self._size

    def __contains__(self, key):
        i = self._slot.get(int(key))
        return i is not None and self._pos[i] >= 0

    def priority(self, key) -> float:
        return float(self._prio[self._slot[int(key)]])

    def peek(self) -> tuple[int, float]:
        if not self._size:
            raise IndexError("peek from empty queue")
        i = self._heap[0]
        return int(self._keys[i]), float(self._prio[i])

    def pop_max(self) -> tuple[int, float]:
        if not self._size:
            raise IndexError("pop from empty queue")
        i, self._size = _pop(self._heap, self._pos, self._prio, self._keys, self._size)
        return int(self._keys[i]), float(self._prio[i])

    def decrease_weight_by(self, key, amount: float) -> None:
        if key not in self:
            raise KeyError(key)
        if amount < 0:
            raise ValueError("amount must be non-negative")
        i = self._slot[int(key)]
        _decrease(self._heap, self._pos, self._prio, self._keys, i, float(amount), self._size)

    def check_invariants(self) -> None:
        heap, pos = self._heap[: self._size], self._pos
        for slot, i in enumerate(heap):
            assert pos[i] == slot
            if slot:
                parent = heap[(slot - 1) >> 1]
                assert not _before(self._prio, self._keys, i, parent)
        assert int((pos >= 0).sum()) == self._size


def _ground_positions(ground, g: NeighborGraph) -> np.ndarray:
    if ground is None:
        return np.arange(len(g), dtype=np.int64)
    ids = as_ids(list(ground) if not isinstance(ground, np.ndarray) else ground)
    if len(np.unique(ids)) != len(ids):
        raise ValueError("duplicate nodes in ground set")
    return np.sort(g.index_of(ids))


def select_positions(g: NeighborGraph, base: np.ndarray, ratio: float, members: np.ndarray,
                     k: int, pos: np.ndarray | None = None, prio: np.ndarray | None = None) -> np.ndarray:
    """Greedy over the subgraph induced by ``members`` (dense positions).

    Returns the popped positions in selection order. ``pos`` must be all -1
    and is restored before returning, so callers may reuse it across calls.
    """
    if pos is None:
        pos = np.full(len(g), -1, dtype=np.int64)
    if prio is None:
        prio = np.empty(len(g), dtype=np.float64)
    members = np.ascontiguousarray(members, dtype=np.int64)
    return _greedy_kernel(g.indptr, g.indices, g.weights, g.ids, base, float(ratio),
                          members, int(k), pos, prio)


def greedy_select(ground, g: NeighborGraph, u: UtilityTable, p: ObjectiveParams, k: int) -> Solution:
    """Pick ``k`` nodes from ``ground`` (None means every graph node)."""
    members = _ground_positions(ground, g)
    if k > len(members):
        raise InfeasibleError(f"k={k} exceeds ground set size {len(members)}")
    if k < 0:
        raise InfeasibleError("k must be non-negative")
    base = np.zeros(len(g), dtype=np.float64)
    base[members] = u.lookup(g.ids[members]) + p.delta_offset
    picked = select_positions(g, base, p.ratio, members, k)
    order = g.ids[picked]
    return Solution(order.copy(), tuple(int(x) for x in order))


def naive_greedy_select(ground, g: NeighborGraph, u: UtilityTable, p: ObjectiveParams, k: int) -> Solution:
    """Textbook greedy: recompute every marginal gain at every step."""
    members = _ground_positions(ground, g)
    if k > len(members) or k < 0:
        raise InfeasibleError(f"k={k} infeasible for ground set size {len(members)}")
    candidates = [int(x) for x in g.ids[members]]
    chosen: list[int] = []
    current = Solution.of([])
    for _ in range(k):
        best, best_gain = None, -np.inf
        for v in candidates:
            if v in current:
                continue
            gain = marginal_gain(current, v, g, u, p)
            if gain > best_gain:
                best, best_gain = v, gain
        chosen.append(best)
        current = Solution.of(chosen)
    return Solution.of(chosen, order=chosen)
