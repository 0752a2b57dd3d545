"""Online supervised hashing with class-wise updates and semi-relaxed SGD.

The package learns linear hash functions ``sgn(W^T x)`` from a labelled
stream, stores the resulting codes in a packed Hamming table, and evaluates
retrieval quality stage by stage.
"""

from fcoh.model import (
    ClassRunningStats,
    HashModel,
    Hyperparams,
    OnlineHasher,
    StreamBatch,
    TraceEntry,
    encode,
    init_model,
    train_batch,
)

__all__ = [
    "ClassRunningStats",
    "HashModel",
    "Hyperparams",
    "OnlineHasher",
    "StreamBatch",
    "TraceEntry",
    "encode",
    "init_model",
    "train_batch",
]

__version__ = "0.1.0"
