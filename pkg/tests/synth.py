"""Synthetic inputs shared by the test modules."""

from __future__ import annotations

import numpy as np


def three_blobs(rng: np.random.Generator, per_blob: int = 20, side: float = 8.0) -> tuple[np.ndarray, np.ndarray]:
    """Three unit-variance Gaussian blobs on a randomly rotated equilateral
    triangle, so no pair of blobs is much closer than the others."""
    angle = rng.uniform(0, 2 * np.pi)
    centers = np.array([[np.cos(angle + a), np.sin(angle + a)] for a in (0, 2 * np.pi / 3, 4 * np.pi / 3)])
    centers *= side * rng.uniform(1.0, 1.5) / np.sqrt(3)
    labels = np.repeat(np.arange(3), per_blob)
    return centers[labels] + rng.normal(size=(3 * per_blob, 2)), labels


def agreement(a, b) -> float:
    """Best label agreement over relabelings (via the contingency table)."""
    from scipy.optimize import linear_sum_assignment

    a, b = np.asarray(a), np.asarray(b)
    ua, ub = np.unique(a), np.unique(b)
    table = np.array([[np.sum((a == x) & (b == y)) for y in ub] for x in ua])
    rows, cols = linear_sum_assignment(-table)
    return float(table[rows, cols].sum() / a.size)


def two_cliques(size: int = 10, inside: float = 1.0, bridge: float = 0.05) -> np.ndarray:
    n = 2 * size
    w = np.zeros((n, n))
    w[:size, :size] = inside
    w[size:, size:] = inside
    np.fill_diagonal(w, 0.0)
    w[size - 1, size] = w[size, size - 1] = bridge
    return w
