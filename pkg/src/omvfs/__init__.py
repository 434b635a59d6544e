"""Online unsupervised multi-view feature selection.

Streams aligned multi-view data chunk by chunk through a buffered,
graph-regularised joint NMF with an l2,1 penalty, and ranks the features of
every view by the row norms of its feature-selection matrix.
"""

from .evaluation import EvalReport, accuracy, evaluate_selection, nmi, spherical_kmeans_multiview
from .optimizer import ChunkReport, buffered_objective, process_chunk, rank_features
from .pipeline import chunks_from_arrays, fit_arrays, rankings, run_stream
from .types import (
    DivergenceError,
    FeatureRanking,
    HyperParams,
    ModelState,
    MultiViewChunk,
    OmvfsError,
    StreamError,
    ValidationError,
    ViewSpec,
    load_state,
    new_state,
    save_state,
    validate,
)

__version__ = "0.1.0"

__all__ = [
    "ChunkReport", "DivergenceError", "EvalReport", "FeatureRanking", "HyperParams", "ModelState",
    "MultiViewChunk", "OmvfsError", "StreamError", "ValidationError", "ViewSpec", "accuracy",
    "buffered_objective", "chunks_from_arrays", "evaluate_selection", "fit_arrays", "load_state",
    "new_state", "nmi", "process_chunk", "rank_features", "rankings", "run_stream", "save_state",
    "spherical_kmeans_multiview", "validate",
]
