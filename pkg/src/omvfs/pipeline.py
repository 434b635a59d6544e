"""Glue for running the streaming solver end to end."""

from __future__ import annotations

from typing import Callable, Iterable, Iterator, Sequence

import numpy as np

from . import ingest, optimizer
from .types import HyperParams, ModelState, MultiViewChunk, ViewSpec, new_state


def chunks_from_arrays(views: Sequence, m: int, labels=None, start: int = 0,
                       stop: int | None = None) -> Iterator[MultiViewChunk]:
    """Slice aligned in-memory matrices into chunks of ``m`` rows."""
    n = views[0].shape[0] if stop is None else stop
    t = 0
    for lo in range(start, n, m):
        hi = min(lo + m, n)
        t += 1
        yield MultiViewChunk(
            t=t,
            per_view=[x[lo:hi] for x in views],
            labels=None if labels is None else np.asarray(labels[lo:hi]),
        )


def view_specs(views: Sequence) -> list[ViewSpec]:
    return [ViewSpec(i, x.shape[1], f"view{i}") for i, x in enumerate(views)]


def run_stream(chunks: Iterable[MultiViewChunk], params: HyperParams, views: Sequence[ViewSpec],
               norm: str = "row-l2", state: ModelState | None = None,
               on_chunk: Callable | None = None) -> tuple[ModelState, list]:
    """Feed every chunk through :func:`optimizer.process_chunk`."""
    state = new_state(params, views) if state is None else state
    reports = []
    for chunk in chunks:
        report = optimizer.process_chunk(state, ingest.normalize_chunk(chunk, norm))
        reports.append(report)
        if on_chunk is not None:
            on_chunk(state, report, chunk)
    return state, reports


def fit_arrays(views: Sequence, params: HyperParams, norm: str = "row-l2") -> tuple[ModelState, list]:
    return run_stream(chunks_from_arrays(views, params.chunk_size), params, view_specs(views), norm)


def rankings(state: ModelState) -> list:
    return [optimizer.rank_features(state, v) for v in range(state.n_views)]
