"""Exact and approximate bounding.

A state splits the ground set into ``grown`` (certainly selected),
``remaining`` (undecided) and ``excluded`` (certainly not selected). For an
undecided node ``v`` with offset utility ``u(v) + delta``:

* the minimum utility subtracts ``beta/alpha * s`` for every neighbor that is
  grown or still undecided,
* the maximum utility only for grown neighbors,
* the expected utility for grown neighbors plus a sample of undecided ones.

Grow admits nodes whose lower bound beats the ``residual_k``-th largest
maximum utility; shrink drops nodes whose maximum utility is below the
``residual_k``-th largest lower bound. All utilities of a step are computed
from the state at the start of the step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum

import numpy as np

from .core import (
    NeighborGraph,
    ObjectiveParams,
    Solution,
    UtilityTable,
    as_ids,
    grouped_fold,
)
from .greedy import InfeasibleError, _ground_positions, greedy_select

OUTSIDE, REMAINING, GROWN, EXCLUDED = -1, 0, 1, 2


class SamplingMode(str, Enum):
    EXACT = "exact"
    UNIFORM = "uniform"
    WEIGHTED = "weighted"


@dataclass(frozen=True)
class SamplingPolicy:
    mode: SamplingMode = SamplingMode.EXACT
    fraction: float = 1.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "mode", SamplingMode(self.mode))
        if not 0 < self.fraction <= 1:
            raise ValueError("sampling fraction must lie in (0, 1]")

    @property
    def exact(self) -> bool:
        return self.mode is SamplingMode.EXACT


EXACT = SamplingPolicy()


_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)


def _splitmix(x: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        z = x + _GOLDEN
        z = (z ^ (z >> np.uint64(30))) * _M1
        z = (z ^ (z >> np.uint64(27))) * _M2
        return z ^ (z >> np.uint64(31))


def sample_keys(seed: int, step: int, centers: np.ndarray, nbrs: np.ndarray) -> np.ndarray:
    """Uniform draws in (0, 1), one per (seed, step, center, neighbor)."""
    h = _splitmix(np.full(len(centers), np.uint64(seed & 0xFFFFFFFFFFFFFFFF)))
    h = _splitmix(h ^ np.uint64(step))
    h = _splitmix(h ^ as_ids(centers))
    h = _splitmix(h ^ as_ids(nbrs))
    return ((h >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0 ** -53


def sample_mask(owner: np.ndarray, centers: np.ndarray, nbrs: np.ndarray, sims: np.ndarray,
                in_grown: np.ndarray, in_rem: np.ndarray, policy: SamplingPolicy, step: int,
                n_groups: int) -> np.ndarray:
    """Which undecided-neighbor edges enter the expected utility.

    Edges are grouped by ``owner`` (contiguous, ascending). Per group the
    target is ``floor(fraction * |N| + 0.5)`` neighbors where ``N`` is the
    grown plus undecided neighborhood; grown neighbors always count and only
    the shortfall is drawn from undecided neighbors without replacement.
    Uniform mode ranks by a uniform key, weighted mode by an exponential key
    scaled by ``1/s`` (probability proportional to similarity).
    """
    if len(owner) == 0:
        return np.zeros(0, dtype=bool)
    n_live = np.bincount(owner, weights=(in_grown | in_rem), minlength=n_groups)
    n_grown = np.bincount(owner, weights=in_grown, minlength=n_groups)
    n_rem = n_live - n_grown
    target = np.floor(policy.fraction * n_live + 0.5)
    quota = np.clip(target - n_grown, 0, n_rem).astype(np.int64)
    keys = sample_keys(policy.seed, step, centers, nbrs)
    if policy.mode is SamplingMode.WEIGHTED:
        with np.errstate(divide="ignore"):
            keys = -np.log(keys) / sims
    keys = np.where(in_rem, keys, np.inf)
    order = np.lexsort((as_ids(nbrs), keys, ~in_rem, owner))
    sorted_owner = owner[order]
    first = np.searchsorted(sorted_owner, sorted_owner, side="left")
    rank = np.empty(len(owner), dtype=np.int64)
    rank[order] = np.arange(len(owner)) - first
    return in_rem & (rank < quota[owner])


@dataclass(frozen=True)
class BoundingState:
    ids: np.ndarray
    status: np.ndarray
    k_target: int
    grow_rounds: int = 0
    shrink_rounds: int = 0

    def _where(self, code) -> np.ndarray:
        return self.ids[self.status == code]

    @property
    def grown(self) -> np.ndarray:
        return self._where(GROWN)

    @property
    def remaining(self) -> np.ndarray:
        return self._where(REMAINING)

    @property
    def excluded(self) -> np.ndarray:
        return self._where(EXCLUDED)

    @property
    def residual_k(self) -> int:
        return self.k_target - int((self.status == GROWN).sum())

    @property
    def steps(self) -> int:
        return self.grow_rounds + self.shrink_rounds

    def counts(self) -> tuple[int, int, int]:
        return (int((self.status == GROWN).sum()), int((self.status == REMAINING).sum()),
                int((self.status == EXCLUDED).sum()))

    def with_status(self, status: np.ndarray, **kw) -> "BoundingState":
        status.setflags(write=False)
        return replace(self, status=status, **kw)


def initial_state(ground, g: NeighborGraph, k: int) -> BoundingState:
    rows = _ground_positions(ground, g)
    if k > len(rows) or k < 0:
        raise InfeasibleError(f"k={k} infeasible for ground set size {len(rows)}")
    status = np.full(len(g), OUTSIDE, dtype=np.int8)
    status[rows] = REMAINING
    status.setflags(write=False)
    return BoundingState(g.ids, status, int(k))


def state_from_sets(g: NeighborGraph, k: int, grown=(), remaining=(), excluded=()) -> BoundingState:
    status = np.full(len(g), OUTSIDE, dtype=np.int8)
    for code, nodes in ((GROWN, grown), (REMAINING, remaining), (EXCLUDED, excluded)):
        rows = g.index_of(as_ids(list(nodes)))
        if np.any(status[rows] != OUTSIDE):
            raise ValueError("grown, remaining and excluded must be disjoint")
        status[rows] = code
    st = BoundingState(g.ids, status, int(k))
    if st.residual_k < 0:
        raise ValueError("more grown nodes than k")
    status.setflags(write=False)
    return st


def _rows_for(st: BoundingState, g: NeighborGraph, nodes) -> np.ndarray:
    rows = g.index_of(as_ids(nodes))
    if np.any(st.status[rows] != REMAINING):
        bad = int(g.ids[rows[np.argmax(st.status[rows] != REMAINING)]])
        raise ValueError(f"node {bad} is not in the remaining set")
    return rows


def utility_bounds(st: BoundingState, g: NeighborGraph, u: UtilityTable, p: ObjectiveParams,
                   policy: SamplingPolicy = EXACT, rows: np.ndarray | None = None):
    """(lower, upper) utilities for ``rows`` (default: all remaining, ascending).

    ``lower`` is the minimum utility under exact policy and the expected
    utility otherwise; ``upper`` is the maximum utility.
    """
    if rows is None:
        rows = np.flatnonzero(st.status == REMAINING)
    base = u.lookup(g.ids[rows]) + p.delta_offset
    owner, e = g.edges_of(rows)
    nbr = g.indices[e]
    w = g.weights[e]
    nst = st.status[nbr]
    in_grown = nst == GROWN
    in_rem = nst == REMAINING
    upper_pen = grouped_fold(owner, w * in_grown, len(rows))
    if policy.exact:
        take = in_grown | in_rem
    else:
        take = in_grown | sample_mask(owner, g.ids[rows][owner], g.ids[nbr], w, in_grown, in_rem,
                                      policy, st.steps, len(rows))
    lower_pen = grouped_fold(owner, w * take, len(rows))
    return base - p.ratio * lower_pen, base - p.ratio * upper_pen


def min_utility(v, st, g, u, p) -> float:
    rows = _rows_for(st, g, [v])
    return float(utility_bounds(st, g, u, p, EXACT, rows)[0][0])


def max_utility(v, st, g, u, p) -> float:
    rows = _rows_for(st, g, [v])
    return float(utility_bounds(st, g, u, p, EXACT, rows)[1][0])


def expected_utility(v, st, g, u, p, policy: SamplingPolicy) -> float:
    if policy.exact:
        raise ValueError("expected utility needs a sampling policy")
    rows = _rows_for(st, g, [v])
    return float(utility_bounds(st, g, u, p, policy, rows)[0][0])


def kth_largest(values: np.ndarray, k: int) -> float:
    """The k-th largest value, or -inf when fewer than ``k`` + 1 candidates exist."""
    if k <= 0 or len(values) <= k:
        return -math.inf
    return float(np.partition(values, len(values) - k)[len(values) - k])


def grow_step(st: BoundingState, g, u, p, policy: SamplingPolicy = EXACT) -> BoundingState:
    residual = st.residual_k
    if residual <= 0:
        return st
    rows = np.flatnonzero(st.status == REMAINING)
    lower, upper = utility_bounds(st, g, u, p, policy, rows)
    threshold = kth_largest(upper, residual)
    status = st.status.copy()
    status[rows[lower > threshold]] = GROWN
    return st.with_status(status, grow_rounds=st.grow_rounds + 1)


def shrink_step(st: BoundingState, g, u, p, policy: SamplingPolicy = EXACT) -> BoundingState:
    rows = np.flatnonzero(st.status == REMAINING)
    status = st.status.copy()
    residual = st.residual_k
    if residual <= 0:
        status[rows] = EXCLUDED
        return st.with_status(status, shrink_rounds=st.shrink_rounds + 1)
    lower, upper = utility_bounds(st, g, u, p, policy, rows)
    threshold = kth_largest(lower, residual)
    status[rows[upper < threshold]] = EXCLUDED
    return st.with_status(status, shrink_rounds=st.shrink_rounds + 1)


def overshoot_drops(n_grown: int, k_target: int, seed: int) -> np.ndarray:
    """Positions (within the ascending grown list) dropped to trim an overshoot."""
    rng = np.random.default_rng([seed & 0xFFFFFFFFFFFFFFFF, 0x5EED])
    return np.sort(rng.choice(n_grown, size=n_grown - k_target, replace=False))


def run_bounding(st, grow, shrink, trace: list | None = None):
    """Alternate shrink and grow phases, each repeated to its own fixpoint.

    Works on any state exposing ``counts()`` and ``residual_k``; ``grow`` and
    ``shrink`` map a state to the next one. The loop stops when a grow phase
    changes nothing (the shrink fixpoint before it still holds), when a later
    shrink phase changes nothing, or when the budget is filled.
    """
    def step(fn, s):
        before = s.counts()
        s = fn(s)
        if trace is not None:
            trace.append(s)
        return s, s.counts() != before

    first = True
    while st.residual_k > 0:
        shrunk = False
        while st.residual_k > 0:
            st, changed = step(shrink, st)
            if not changed:
                break
            shrunk = True
        if st.residual_k <= 0 or (not first and not shrunk):
            break
        grew = False
        while st.residual_k > 0:
            st, changed = step(grow, st)
            if not changed:
                break
            grew = True
        if not grew:
            break
        first = False
    return st


def finalize(st: BoundingState, seed: int) -> BoundingState:
    """Trim an overshooting grown set and close out a filled budget."""
    status = st.status.copy()
    if st.residual_k < 0:
        rows = np.flatnonzero(status == GROWN)
        status[rows[overshoot_drops(len(rows), st.k_target, seed)]] = EXCLUDED
    if int((status == GROWN).sum()) == st.k_target:
        status[status == REMAINING] = EXCLUDED
    return st.with_status(status)


def bound(ground, g: NeighborGraph, u: UtilityTable, p: ObjectiveParams, k: int,
          policy: SamplingPolicy = EXACT, trace: list | None = None) -> BoundingState:
    st = initial_state(ground, g, k)
    st = run_bounding(
        st,
        lambda s: grow_step(s, g, u, p, policy),
        lambda s: shrink_step(s, g, u, p, policy),
        trace=trace,
    )
    st = finalize(st, policy.seed)
    if trace is not None and (not trace or trace[-1].counts() != st.counts()):
        trace.append(st)
    return st


def residual_utilities(st: BoundingState, g: NeighborGraph, u: UtilityTable, p: ObjectiveParams) -> UtilityTable:
    """Utilities of undecided nodes discounted by their grown neighbors.

    Greedy over the undecided nodes with these utilities continues exactly
    where a greedy run seeded with the grown set would.
    """
    rows = np.flatnonzero(st.status == REMAINING)
    _, upper = utility_bounds(st, g, u, p, EXACT, rows)
    return UtilityTable(g.ids[rows], upper - p.delta_offset)


def complete_greedy(st: BoundingState, g: NeighborGraph, u: UtilityTable, p: ObjectiveParams) -> Solution:
    """Grown set plus a centralized greedy pick of the residual budget."""
    grown = st.grown
    if st.residual_k == 0:
        return Solution(grown)
    rest = greedy_select(st.remaining, g, residual_utilities(st, g, u, p), p, st.residual_k)
    return Solution(np.concatenate([grown, rest.members]))
