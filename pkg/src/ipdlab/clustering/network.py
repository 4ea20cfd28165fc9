"""Similarity graphs over feature vectors and Louvain community detection."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import networkx as nx
import numpy as np

from .partition import canonical_labels


@dataclass(frozen=True, eq=False)
class WeightedGraph:
    """Undirected graph held as a symmetric weight matrix with zero diagonal;
    a zero entry means no edge."""

    nodes: tuple[str, ...]
    weights: np.ndarray

    def __post_init__(self) -> None:
        w = np.array(self.weights, dtype=float)
        n = len(self.nodes)
        if w.shape != (n, n):
            raise ValueError("weight matrix does not match the node list")
        if not np.allclose(w, w.T) or np.any(np.diag(w) != 0) or np.any(w < 0):
            raise ValueError("weights must be symmetric, non-negative, with a zero diagonal")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @property
    def edges(self) -> list[tuple[int, int, float]]:
        i, j = np.triu_indices(len(self.nodes), 1)
        return [(int(a), int(b), float(self.weights[a, b])) for a, b in zip(i, j) if self.weights[a, b] > 0]

    def to_networkx(self) -> nx.Graph:
        g = nx.Graph()
        g.add_nodes_from(range(len(self.nodes)))
        g.add_weighted_edges_from(self.edges)
        return g


def build_similarity_graph(features, nodes: Sequence[str] | None = None) -> WeightedGraph:
    """Complete graph with w = 1 / (d + 1), d the Euclidean feature distance."""
    x = np.array([f.as_array() if hasattr(f, "as_array") else f for f in features], dtype=float)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValueError("a similarity graph needs at least 2 participants")
    nodes = tuple(nodes) if nodes is not None else tuple(str(i) for i in range(x.shape[0]))
    d = np.sqrt(((x[:, None, :] - x[None, :, :]) ** 2).sum(axis=-1))
    w = 1.0 / (d + 1.0)
    np.fill_diagonal(w, 0.0)
    return WeightedGraph(nodes, w)


@dataclass(frozen=True)
class Partition:
    labels: np.ndarray
    modularity: float

    @property
    def communities(self) -> list[list[int]]:
        return [np.flatnonzero(self.labels == c).tolist() for c in range(int(self.labels.max()) + 1)]


def modularity(graph: WeightedGraph, labels) -> float:
    labels = np.asarray(labels)
    groups = [set(np.flatnonzero(labels == c).tolist()) for c in np.unique(labels)]
    return float(nx.community.modularity(graph.to_networkx(), groups, weight="weight"))


def louvain(graph: WeightedGraph, seed: int = 0) -> Partition:
    """Louvain modularity maximization at resolution 1."""
    n = len(graph.nodes)
    if n == 0 or not np.any(graph.weights > 0):
        raise ValueError("empty graph: louvain needs at least one weighted edge")
    g = graph.to_networkx()
    comms = nx.community.louvain_communities(g, weight="weight", resolution=1.0, seed=seed)
    labels = np.empty(n, dtype=np.int64)
    for c, members in enumerate(comms):
        labels[list(members)] = c
    labels = canonical_labels(labels)
    groups = [set(np.flatnonzero(labels == c).tolist()) for c in range(labels.max() + 1)]
    return Partition(labels, float(nx.community.modularity(g, groups, weight="weight")))


def shuffle_weights(graph: WeightedGraph, rng: np.random.Generator) -> WeightedGraph:
    """Randomly reassign weights over all node pairs (absent edges included)."""
    n = len(graph.nodes)
    i, j = np.triu_indices(n, 1)
    w = graph.weights[i, j]
    shuffled = np.zeros((n, n))
    shuffled[i, j] = rng.permutation(w)
    return WeightedGraph(graph.nodes, shuffled + shuffled.T)


def random_baseline_modularity(graph: WeightedGraph, iterations: int = 100, seed: int = 0) -> tuple[float, float]:
    """Mean and standard deviation of Louvain modularity over weight-shuffled
    copies. Every copy gets its own shuffling stream; Louvain itself always
    runs with ``seed`` so identical copies score identically."""
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    streams = np.random.SeedSequence(seed).spawn(iterations)
    scores = np.array(
        [louvain(shuffle_weights(graph, np.random.default_rng(s)), seed).modularity for s in streams]
    )
    return float(scores.mean()), float(scores.std(ddof=1) if iterations > 1 else 0.0)
