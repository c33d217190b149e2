"""Multi-round partitioned greedy.

Each round shrinks the candidate set to a target size ``n_round`` given by a
linear schedule ending at ``k``. The candidates are split uniformly at random
into ``m_round`` parts, every part runs the centralized greedy on its induced
subgraph (edges between parts are ignored) for ``ceil(n_round / m_round)``
picks, and the union of the picks is the next round's candidate set. No
final greedy over the union is run; an overshoot after the last round is
removed by uniform subsampling.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .core import NeighborGraph, ObjectiveParams, Solution, UtilityTable, objective_score
from .greedy import InfeasibleError, _ground_positions, select_positions


@dataclass(frozen=True)
class DistributedConfig:
    m: int = 1
    r: int = 1
    gamma: float = 0.75
    adaptive: bool = True
    seed: int = 0
    adversarial_first_round: Solution | None = None
    workers: int = 1

    def __post_init__(self):
        if self.m < 1 or self.r < 1:
            raise ValueError("m and r must be >= 1")
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must lie in (0, 1]")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")


@dataclass(frozen=True)
class RoundPlan:
    round: int
    n_round: int
    m_round: int
    per_partition_target: int


@dataclass
class RoundStats:
    round: int
    n_round: int
    m_round: int
    union_size: int
    wall_time: float
    score: float


def delta_linear(n0: int, r: int, round: int, k: int, gamma: float = 0.75) -> int:
    """Target size after ``round``: ``ceil(gamma*(r-round)*(n0-k)/r) + k``."""
    if not 1 <= round <= r:
        raise ValueError(f"round {round} outside 1..{r}")
    if k > n0:
        raise ValueError("k exceeds ground set size")
    # rational arithmetic: float products like 0.1*30/3 land just above an integer
    frac = Fraction(gamma).limit_denominator(1_000_000) * (r - round) * (n0 - k) / r
    return math.ceil(frac) + k


def plan_round(ground_size: int, cfg: DistributedConfig, round: int, k: int) -> RoundPlan:
    n_round = delta_linear(ground_size, cfg.r, round, k, cfg.gamma)
    if cfg.adaptive:
        cap = -(-ground_size // cfg.m)
        m_round = max(1, -(-n_round // cap))
    else:
        m_round = cfg.m
    return RoundPlan(round, n_round, m_round, -(-n_round // m_round))


def _rng(seed: int, round: int) -> np.random.Generator:
    return np.random.default_rng([seed & 0xFFFFFFFFFFFFFFFF, round])


def random_partition(nodes, m_round: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Balanced random split; the first ``len % m_round`` parts get one extra."""
    if m_round < 1:
        raise ValueError("m_round must be >= 1")
    nodes = np.sort(np.asarray(nodes))
    if m_round == 1:
        return [nodes]
    perm = rng.permutation(nodes)
    return [np.sort(part) for part in np.array_split(perm, m_round)]


def _adversarial_partition(rows, planted_rows, m_round, rng):
    planted = np.intersect1d(rows, planted_rows)
    rest = np.setdiff1d(rows, planted)
    if m_round == 1:
        return [np.sort(rows)]
    return [planted] + random_partition(rest, m_round - 1, rng)


def distributed_select(ground, g: NeighborGraph, u: UtilityTable, p: ObjectiveParams, k: int,
                       cfg: DistributedConfig, telemetry: list | None = None) -> Solution:
    """Run ``cfg.r`` rounds of partitioned greedy and return ``k`` nodes.

    ``telemetry``, when given, receives one :class:`RoundStats` per round
    (the score is the full-graph objective of the round's union).
    """
    rows = _ground_positions(ground, g)
    n0 = len(rows)
    if k > n0 or k < 0:
        raise InfeasibleError(f"k={k} exceeds ground set size {n0}")
    base = np.zeros(len(g), dtype=np.float64)
    base[rows] = u.lookup(g.ids[rows]) + p.delta_offset
    planted = None
    if cfg.adversarial_first_round is not None:
        planted = g.index_of(cfg.adversarial_first_round.members)

    scratch = [(np.full(len(g), -1, dtype=np.int64), np.empty(len(g))) for _ in range(cfg.workers)]

    def run_part(job):
        slot, part, target = job
        pos, prio = scratch[slot]
        return select_positions(g, base, p.ratio, part, min(target, len(part)), pos, prio)

    current = rows
    order = None
    for rnd in range(1, cfg.r + 1):
        t0 = time.perf_counter()
        plan = plan_round(n0, cfg, rnd, k)
        rng = _rng(cfg.seed, rnd)
        if rnd == 1 and planted is not None:
            parts = _adversarial_partition(current, planted, plan.m_round, rng)
        else:
            parts = random_partition(current, plan.m_round, rng)
        jobs = [(i % cfg.workers, part, plan.per_partition_target) for i, part in enumerate(parts)]
        if cfg.workers == 1:
            picked = [run_part(j) for j in jobs]
        else:
            picked = []
            with ThreadPoolExecutor(cfg.workers) as pool:
                # one wave per worker slot keeps scratch arrays private to a thread
                for start in range(0, len(jobs), cfg.workers):
                    picked.extend(pool.map(run_part, jobs[start:start + cfg.workers]))
        order = np.concatenate(picked) if picked else np.empty(0, dtype=np.int64)
        current = np.sort(order)
        if telemetry is not None:
            score = objective_score(Solution(g.ids[current]), g, u, p)
            telemetry.append(RoundStats(rnd, plan.n_round, plan.m_round, len(current),
                                        time.perf_counter() - t0, score))
    if len(current) > k:
        keep = _rng(cfg.seed, cfg.r + 1).choice(current, size=k, replace=False)
        current = np.sort(keep)
        order = order[np.isin(order, current)]
    return Solution(g.ids[current], tuple(int(x) for x in g.ids[order]))


def normalize_scores(scores, central: float) -> list[float]:
    """Map ``central`` to 100 and the worst observed score to 0."""
    scores = [float(s) for s in scores]
    if not scores:
        raise ValueError("need at least one score")
    worst = min(scores + [central])
    if central == worst:
        return [100.0] * len(scores)
    return [100.0 * (s - worst) / (central - worst) for s in scores]
