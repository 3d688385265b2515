"""Planted-partition benchmark graphs with Gaussian class embeddings.

Nodes split into equal-size class blocks; intra-class pairs connect with
probability p_in, inter-class pairs with p_out. Class c's embedding mean
sits at separation * e_c, with isotropic Gaussian noise of scale sigma.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graphs import EmbeddingMatrix, Graph, NodeTable


@dataclass(frozen=True)
class SbmConfig:
    """Defaults are the calibrated standard benchmark: many classes so that
    proximity-blind bundles carry weak mode labels, embeddings informative
    enough to individualize nodes, moderate homophily (~0.6)."""

    n: int = 400
    n_classes: int = 20
    p_in: float = 0.30
    p_out: float = 0.01
    dim: int = 24
    separation: float = 2.5
    sigma: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.n < 1 or self.n % self.n_classes != 0:
            raise ValueError("n must be a positive multiple of n_classes")
        # p_out > p_in is allowed: heterophilic graphs drive the semantic
        # sampling criterion
        if not (0.0 <= self.p_in <= 1.0 and 0.0 <= self.p_out <= 1.0):
            raise ValueError("edge probabilities must lie in [0, 1]")
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")
        if self.dim < self.n_classes:
            raise ValueError("dim must be >= n_classes to place the class means")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")


def gen_sbm(cfg: SbmConfig):
    """Returns (Graph, EmbeddingMatrix, NodeTable), deterministic per seed."""
    rng = np.random.default_rng(cfg.seed)
    per = cfg.n // cfg.n_classes
    labels = np.repeat(np.arange(cfg.n_classes), per)

    prob = np.where(labels[:, None] == labels[None, :], cfg.p_in, cfg.p_out)
    draw = rng.random((cfg.n, cfg.n))
    upper = np.triu(np.ones((cfg.n, cfg.n), dtype=bool), k=1)
    rows, cols = np.nonzero(upper & (draw < prob))
    graph = Graph.from_edges(cfg.n, zip(rows.tolist(), cols.tolist()))

    means = np.zeros((cfg.n_classes, cfg.dim))
    means[np.arange(cfg.n_classes), np.arange(cfg.n_classes)] = cfg.separation
    x = means[labels] + rng.normal(0.0, cfg.sigma, size=(cfg.n, cfg.dim))

    table = NodeTable(
        n=cfg.n,
        class_names=[f"class_{c}" for c in range(cfg.n_classes)],
        texts=None,
        labels=[int(y) for y in labels],
    )
    return graph, EmbeddingMatrix(x), table


def homophily(graph: Graph, labels) -> float:
    """Fraction of edges joining same-class endpoints."""
    if graph.num_edges == 0:
        return float("nan")
    labels = np.asarray(labels)
    same = sum(1 for u, v in graph.edges if labels[u] == labels[v])
    return same / graph.num_edges
