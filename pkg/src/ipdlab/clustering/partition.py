"""K-means with elbow selection, silhouette scores and Ward hierarchies."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.cluster.hierarchy import cut_tree, linkage
from sklearn.cluster import KMeans
from sklearn.exceptions import ConvergenceWarning
from sklearn.metrics import silhouette_samples

KNEE_TOL = 1e-12


def _points(points) -> np.ndarray:
    x = np.asarray(points, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValueError("empty input: need a non-empty (n, d) array of points")
    return x


def canonical_labels(labels) -> np.ndarray:
    """Relabel so clusters are numbered by first appearance."""
    labels = np.asarray(labels)
    _, first, inverse = np.unique(labels, return_index=True, return_inverse=True)
    rank = np.argsort(np.argsort(first))
    return rank[inverse]


def inertia_of(points, labels) -> float:
    x = _points(points)
    labels = np.asarray(labels)
    total = 0.0
    for c in np.unique(labels):
        members = x[labels == c]
        total += float(((members - members.mean(axis=0)) ** 2).sum())
    return total


@dataclass(frozen=True)
class KMeansResult:
    labels: np.ndarray
    centroids: np.ndarray
    inertia: float

    @property
    def k(self) -> int:
        return self.centroids.shape[0]


def kmeans(points, k: int, restarts: int = 50, seed: int = 0) -> KMeansResult:
    """Best of ``restarts`` k-means++ runs by inertia."""
    x = _points(points)
    n = x.shape[0]
    if restarts < 1:
        raise ValueError("restarts must be >= 1")
    if not 1 <= k <= n:
        raise ValueError(f"k must lie in [1, n={n}], got {k}")
    distinct = np.unique(x, axis=0).shape[0]
    if k > distinct:
        raise ValueError(f"k={k} exceeds the {distinct} distinct points; some cluster would be empty")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        km = KMeans(n_clusters=k, init="k-means++", n_init=restarts, random_state=seed).fit(x)
    labels = canonical_labels(km.labels_)
    centroids = np.array([x[labels == c].mean(axis=0) for c in range(k)])
    return KMeansResult(labels, centroids, inertia_of(x, labels))


def inertia_curve(points, ks, restarts: int = 50, seed: int = 0) -> np.ndarray:
    return np.array([kmeans(points, k, restarts, seed).inertia for k in ks])


@dataclass(frozen=True)
class Knee:
    k: int
    low_confidence: bool = False


def elbow_select(inertias, ks=None) -> Knee:
    """Knee of a decreasing inertia curve.

    Both axes are scaled to [0, 1]; the knee is the point farthest below the
    chord joining the endpoints. Ties go to the smaller k. A curve without
    any point below the chord (e.g. a straight line) yields the smallest
    interior k, flagged as low confidence.
    """
    y = np.asarray(inertias, dtype=float)
    if y.ndim != 1 or y.size < 3:
        raise ValueError("elbow_select needs inertias for at least 3 values of k")
    ks = np.arange(1, y.size + 1) if ks is None else np.asarray(ks)
    if ks.shape != y.shape or np.any(np.diff(ks) != 1):
        raise ValueError("ks must be a contiguous range matching inertias")
    if not y[-1] < y[0]:
        raise ValueError("no knee: inertia curve is not decreasing")
    xn = (ks - ks[0]) / (ks[-1] - ks[0])
    yn = (y - y[-1]) / (y[0] - y[-1])
    gap = (1.0 - xn) - yn
    best = gap.max()
    if best <= KNEE_TOL:
        return Knee(int(ks[1]), low_confidence=True)
    return Knee(int(ks[np.flatnonzero(gap >= best - KNEE_TOL)[0]]))


def silhouette(points, labels) -> float:
    """Mean silhouette; points in singleton clusters score 0."""
    x = _points(points)
    labels = np.asarray(labels)
    if labels.shape[0] != x.shape[0]:
        raise ValueError("labels and points differ in length")
    if np.unique(labels).size < 2:
        raise ValueError("silhouette needs at least 2 clusters")
    if np.unique(labels).size >= x.shape[0]:
        return 0.0
    return float(silhouette_samples(x, labels).mean())


@dataclass(frozen=True)
class Dendrogram:
    """scipy linkage matrix plus merge heights as Ward's SSE increase."""

    linkage: np.ndarray
    n: int

    @property
    def heights(self) -> np.ndarray:
        # scipy's Ward distance is sqrt(2 * delta SSE)
        return self.linkage[:, 2] ** 2 / 2.0


def hierarchical_ward(points) -> Dendrogram:
    x = _points(points)
    if x.shape[0] < 2:
        raise ValueError("hierarchical clustering needs at least 2 points")
    return Dendrogram(linkage(x, method="ward"), x.shape[0])


def cut(dendrogram: Dendrogram, k: int) -> np.ndarray:
    """Labels of the k-cluster level of the merge tree."""
    if not 1 <= k <= dendrogram.n:
        raise ValueError(f"k must lie in [1, {dendrogram.n}], got {k}")
    return canonical_labels(cut_tree(dendrogram.linkage, n_clusters=k).ravel())
