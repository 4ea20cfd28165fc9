"""K-means, elbow and silhouette, Ward hierarchies, Louvain on similarity
graphs, and t-SNE embeddings."""

from .embedding import default_perplexity, tsne_embed
from .network import (
    Partition,
    WeightedGraph,
    build_similarity_graph,
    louvain,
    modularity,
    random_baseline_modularity,
    shuffle_weights,
)
from .partition import (
    Dendrogram,
    KMeansResult,
    Knee,
    canonical_labels,
    cut,
    elbow_select,
    hierarchical_ward,
    inertia_curve,
    inertia_of,
    kmeans,
    silhouette,
)

__all__ = [
    "Dendrogram",
    "KMeansResult",
    "Knee",
    "Partition",
    "WeightedGraph",
    "build_similarity_graph",
    "canonical_labels",
    "cut",
    "default_perplexity",
    "elbow_select",
    "hierarchical_ward",
    "inertia_curve",
    "inertia_of",
    "kmeans",
    "louvain",
    "modularity",
    "random_baseline_modularity",
    "shuffle_weights",
    "silhouette",
    "tsne_embed",
]
