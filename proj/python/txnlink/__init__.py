"""Link prediction and anomaly scoring on customer-transaction graphs."""

from ._core import (
    Graph,
    TxnlinkError,
    __version__,
    average_precision,
    cosine_similarity,
    embeddings,
    generate,
    kmeans,
    roc_auc,
    run,
    score,
)

__all__ = [
    "Graph",
    "TxnlinkError",
    "__version__",
    "average_precision",
    "cosine_similarity",
    "embeddings",
    "generate",
    "kmeans",
    "roc_auc",
    "run",
    "score",
]
