from __future__ import annotations

import numpy as np
from sklearn.manifold import TSNE

DEFAULT_PERPLEXITY = 30.0


def tsne_embed(points, perplexity: float = DEFAULT_PERPLEXITY, seed: int = 0) -> np.ndarray:
    """Exact-gradient t-SNE to 2D (learning rate 200, 1000 iterations,
    random initialization)."""
    x = np.asarray(points, dtype=float)
    n = x.shape[0]
    if n < 4:
        raise ValueError("t-SNE needs at least 4 points")
    if not 0 < perplexity < n:
        raise ValueError(f"perplexity must lie in (0, n={n}), got {perplexity}")
    model = TSNE(
        n_components=2,
        perplexity=perplexity,
        learning_rate=200.0,
        max_iter=1000,
        init="random",
        method="exact",
        random_state=seed,
    )
    return model.fit_transform(x)


def default_perplexity(n: int) -> float:
    """30, reduced to (n - 1) / 3 for small samples."""
    return min(DEFAULT_PERPLEXITY, (n - 1) / 3.0)
