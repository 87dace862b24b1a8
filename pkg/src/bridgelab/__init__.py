"""bridgelab: relevance-to-utility bridging toolkit for retrieval-augmented
generation pipelines."""

from .core import (
    Document,
    QAExample,
    RewriteSet,
    RewrittenDocument,
    classify_answer_type,
    load_dataset,
    normalize_answer,
    save_dataset,
)
from .metrics import ScoredPrediction, aggregate, exact_match, token_f1
from .gateway import Gateway, GenRequest, MockBackend, OpenAIBackend, ScoreRequest

__version__ = "0.1.0"

__all__ = [
    "Document",
    "QAExample",
    "RewriteSet",
    "RewrittenDocument",
    "classify_answer_type",
    "load_dataset",
    "normalize_answer",
    "save_dataset",
    "ScoredPrediction",
    "aggregate",
    "exact_match",
    "token_f1",
    "Gateway",
    "GenRequest",
    "MockBackend",
    "OpenAIBackend",
    "ScoreRequest",
    "__version__",
]
