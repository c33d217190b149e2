"""Seeded Gaussian-mixture datasets standing in for image embeddings and classifier outputs."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import NeighborGraph, UtilityTable
from .graph_prep import EmbeddingMatrix, PredictionTable, build_knn, margin_utility, symmetrize


@dataclass(frozen=True)
class MixtureConfig:
    n: int = 20_000
    dim: int = 64
    clusters: int = 10
    # distance between cluster means relative to the per-coordinate noise
    separation: float = 1.5
    # softens the Bayes posterior so margins spread over [0, 1]
    temperature: float = 16.0
    seed: int = 0

    def __post_init__(self):
        if self.n < 2 or self.dim < 1 or self.clusters < 2:
            raise ValueError("need n >= 2, dim >= 1 and at least two clusters")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")


@dataclass(frozen=True)
class SyntheticDataset:
    embeddings: EmbeddingMatrix
    predictions: PredictionTable
    graph: NeighborGraph
    utilities: UtilityTable


def gaussian_mixture(cfg: MixtureConfig) -> tuple[EmbeddingMatrix, PredictionTable]:
    """Embeddings drawn around random cluster means and the (tempered)
    posterior class probabilities of the generating mixture."""
    rng = np.random.default_rng(cfg.seed)
    means = rng.normal(size=(cfg.clusters, cfg.dim))
    means *= cfg.separation / np.linalg.norm(means, axis=1, keepdims=True) * np.sqrt(cfg.dim) / 2
    labels = rng.integers(0, cfg.clusters, cfg.n)
    x = means[labels] + rng.normal(size=(cfg.n, cfg.dim))
    # log posterior up to a constant: -|x - mu_c|^2 / 2
    d2 = (x * x).sum(1)[:, None] - 2 * x @ means.T + (means * means).sum(1)[None, :]
    logits = -d2 / (2 * cfg.temperature)
    logits -= logits.max(axis=1, keepdims=True)
    probs = np.exp(logits)
    probs /= probs.sum(axis=1, keepdims=True)
    ids = np.arange(cfg.n, dtype=np.uint64)
    return EmbeddingMatrix(ids, x), PredictionTable(ids, probs)


def make_dataset(cfg: MixtureConfig = MixtureConfig(), k_nn: int = 10, workers: int = 1) -> SyntheticDataset:
    emb, pred = gaussian_mixture(cfg)
    graph = symmetrize(build_knn(emb, k_nn, workers=workers))
    return SyntheticDataset(emb, pred, graph, margin_utility(pred))


def random_instance(rng: np.random.Generator, n: int, edge_prob: float = 0.3, ids=None):
    """Small random graph and utilities for property tests; ids default to a
    sparse random sample so dense positions and ids differ."""
    if ids is None:
        ids = np.sort(rng.choice(10 * n + 10, size=n, replace=False)).astype(np.uint64)
    iu, ju = np.triu_indices(n, 1)
    keep = rng.random(len(iu)) < edge_prob
    a, b = ids[iu[keep]], ids[ju[keep]]
    s = rng.random(len(a))
    g = NeighborGraph.from_edges(np.r_[a, b], np.r_[b, a], np.r_[s, s], nodes=ids)
    return g, UtilityTable(ids, rng.random(n))
