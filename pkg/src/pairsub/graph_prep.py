"""Similarity graph and utilities from embeddings and class predictions."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .core import GraphFormatError, NeighborGraph, UtilityTable, as_ids, center_utilities

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class EmbeddingMatrix:
    ids: np.ndarray
    vectors: np.ndarray

    def __post_init__(self):
        ids = as_ids(self.ids)
        vec = np.atleast_2d(np.asarray(self.vectors, dtype=np.float64))
        if vec.shape[0] != len(ids):
            raise ValueError("one vector per id required")
        if vec.shape[1] < 1:
            raise ValueError("embedding dimension must be positive")
        if not np.all(np.isfinite(vec)):
            bad = int(ids[np.argmax(~np.all(np.isfinite(vec), axis=1))])
            raise ValueError(f"non-finite embedding for node {bad}")
        order = np.argsort(ids, kind="stable")
        ids, vec = ids[order], vec[order]
        if len(ids) > 1 and np.any(ids[1:] == ids[:-1]):
            raise ValueError("duplicate embedding ids")
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "vectors", np.ascontiguousarray(vec))

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def __len__(self):
        return len(self.ids)


@dataclass(frozen=True)
class PredictionTable:
    ids: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        ids = as_ids(self.ids)
        probs = np.atleast_2d(np.asarray(self.probs, dtype=np.float64))
        if probs.shape[0] != len(ids):
            raise ValueError("one probability row per id required")
        if np.any(probs < 0) or np.any(probs > 1) or not np.all(np.isfinite(probs)):
            raise ValueError("probabilities must lie in [0, 1]")
        off = np.abs(probs.sum(axis=1) - 1) > 1e-6
        if np.any(off):
            raise ValueError(f"probabilities of node {int(ids[np.argmax(off)])} do not sum to 1")
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "probs", probs)


@dataclass(frozen=True)
class DirectedKnn:
    """Row ``i`` of ``neighbors``/``sims`` holds the k nearest of ``ids[i]``."""
    ids: np.ndarray
    neighbors: np.ndarray
    sims: np.ndarray

    @property
    def k_nn(self) -> int:
        return self.neighbors.shape[1]


def _unit_rows(e: EmbeddingMatrix) -> np.ndarray:
    norms = np.linalg.norm(e.vectors, axis=1)
    zero = norms == 0
    if np.any(zero):
        raise ValueError(f"zero-norm embedding for node {int(e.ids[np.argmax(zero)])}")
    return e.vectors / norms[:, None]


def pair_cosine(unit: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Cosine of row pairs, evaluated with the smaller index first so that
    ``(a, b)`` and ``(b, a)`` give bit-identical values; clamped to [0, 1]."""
    lo, hi = np.minimum(a, b), np.maximum(a, b)
    s = np.einsum("ij,ij->i", unit[lo], unit[hi]) if len(lo) else np.empty(0)
    return np.clip(s, 0.0, 1.0)


def _top_k_block(unit, start, stop, k_nn):
    sims = unit[start:stop] @ unit.T
    rows = np.arange(start, stop)
    sims[rows - start, rows] = -np.inf
    out = np.empty((stop - start, k_nn), dtype=np.int64)
    # k-th largest per row; everything at or above it is a candidate, then
    # (similarity desc, index asc) picks the final k deterministically
    kth = -np.partition(-sims, k_nn - 1, axis=1)[:, k_nn - 1]
    for i in range(stop - start):
        cand = np.flatnonzero(sims[i] >= kth[i])
        order = np.lexsort((cand, -sims[i, cand]))
        out[i] = cand[order[:k_nn]]
    return out


def build_knn(e: EmbeddingMatrix, k_nn: int, workers: int = 1, block: int = 1024) -> DirectedKnn:
    """Exact k nearest neighbors by cosine similarity (self excluded)."""
    n = len(e)
    if k_nn < 1 or k_nn >= n:
        raise ValueError(f"k_nn must lie in [1, {n - 1}], got {k_nn}")
    unit = _unit_rows(e)
    spans = [(s, min(s + block, n)) for s in range(0, n, block)]
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(lambda sp: _top_k_block(unit, sp[0], sp[1], k_nn), spans))
    else:
        parts = [_top_k_block(unit, a, b, k_nn) for a, b in spans]
    nbr = np.concatenate(parts)
    src = np.repeat(np.arange(n), k_nn)
    sims = pair_cosine(unit, src, nbr.ravel()).reshape(n, k_nn)
    return DirectedKnn(e.ids, e.ids[nbr], sims)


def symmetrize(knn: DirectedKnn) -> NeighborGraph:
    """Union of both edge directions.

    If the two directions of a pair carry different similarities (rounded
    input) the larger one is kept and a warning is logged.
    """
    n, k = knn.neighbors.shape
    src = np.repeat(knn.ids, k)
    dst = knn.neighbors.ravel()
    sim = knn.sims.ravel()
    a = np.concatenate([src, dst])
    b = np.concatenate([dst, src])
    s = np.concatenate([sim, sim])
    if np.any(a == b):
        raise GraphFormatError("self-loop in neighbor lists")
    order = np.lexsort((-s, b, a))
    a, b, s = a[order], b[order], s[order]
    first = np.ones(len(a), dtype=bool)
    first[1:] = (a[1:] != a[:-1]) | (b[1:] != b[:-1])
    head = np.flatnonzero(first)
    head_of = head[np.searchsorted(head, np.flatnonzero(~first), side="right") - 1]
    mismatched = int(np.sum(s[~first] != s[head_of]))
    if mismatched:
        log.warning("%d duplicate edges with unequal similarities; kept the maximum", mismatched)
    return NeighborGraph.from_edges(a[first], b[first], s[first], nodes=knn.ids)


def margin_utility(p: PredictionTable, center: bool = True) -> UtilityTable:
    """``1 - (P(top) - P(second))`` per row, optionally shifted to min 0."""
    if p.probs.shape[1] < 2:
        raise ValueError("margin utility needs at least two classes")
    top2 = -np.partition(-p.probs, 1, axis=1)[:, :2]
    raw = UtilityTable(p.ids, 1.0 - (top2[:, 0] - top2[:, 1]))
    return center_utilities(raw) if center else raw
