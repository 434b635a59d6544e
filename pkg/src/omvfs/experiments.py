"""Drift tracking and timing experiments built on the streaming solver."""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import evaluation, optimizer, synth
from .pipeline import chunks_from_arrays, rankings, run_stream, view_specs
from .types import HyperParams, ValidationError


@dataclass
class DriftRow:
    window: int
    track: str
    p: int
    acc: float
    nmi: float

    def as_tuple(self):
        return (self.window, self.track, self.p, self.acc, self.nmi)


def drift_tracks(views: Sequence, labels, params: HyperParams, window: int, static_p: int = 200,
                 p_list: Sequence[int] | None = None, static_rows: int | None = None,
                 norm: str = "row-l2", eval_seed: int = 0) -> list[DriftRow]:
    """Compare the adapting ranking with one frozen after ``static_rows`` instances.

    After each window of ``window`` instances both rankings select features
    and the window's instances are clustered and scored.  The adaptive track is
    evaluated at every size in ``p_list`` (default: ``static_p`` only); the
    static track always uses ``static_p``.
    """
    n = views[0].shape[0]
    if window < 1 or window > n:
        raise ValidationError(f"window {window} must lie in [1, {n}]")
    m = params.chunk_size
    static_rows = window if static_rows is None else static_rows
    p_list = [static_p] if p_list is None else list(p_list)
    k = params.k
    boundaries = set(range(window, n + 1, window))

    out: list[DriftRow] = []
    static = None
    seen = 0

    def on_chunk(state, report, chunk):
        nonlocal static, seen
        seen += chunk.rows
        if static is None and seen >= static_rows:
            static = rankings(state)
        if seen in boundaries:
            w = seen // window - 1
            lo, hi = w * window, seen
            data = [x[lo:hi] for x in views]
            truth = labels[lo:hi]
            for p in p_list:
                rep = evaluation.evaluate_selection(rankings(state), [p] * len(views), data, truth, k, eval_seed)
                out.append(DriftRow(w, "adaptive", p, rep.acc, rep.nmi))
            rep = evaluation.evaluate_selection(static, [static_p] * len(views), data, truth, k, eval_seed)
            out.append(DriftRow(w, "static", static_p, rep.acc, rep.nmi))

    # chunks never straddle a window boundary
    if window % m:
        raise ValidationError("window must be a multiple of the chunk size")
    run_stream(chunks_from_arrays(views, m, labels), params, view_specs(views), norm, on_chunk=on_chunk)
    return out


def time_core_loop(views: Sequence, params: HyperParams, norm: str = "row-l2", repeats: int = 1) -> float:
    """Best wall time over ``repeats`` runs of the streaming loop on in-memory data."""
    best = np.inf
    for _ in range(repeats):
        chunks = [c for c in chunks_from_arrays(views, params.chunk_size)]
        start = time.perf_counter()
        run_stream(chunks, params, view_specs(views), norm)
        best = min(best, time.perf_counter() - start)
    return float(best)


def bench(size_grid: Sequence[int], dim_grid: Sequence[int], params: HyperParams, n_views: int = 2,
          repeats: int = 1, seed: int = 0) -> list[tuple[int, int, float]]:
    """Time the core loop on synthetic data for every (N, D) grid point.

    The inner loop runs a fixed number of iterations (``inner_tol`` is
    ignored) so timings reflect per-iteration cost rather than convergence
    luck.
    """
    if not size_grid or not dim_grid:
        raise ValidationError("grids must be nonempty")
    fixed = HyperParams(**{**params.to_dict(), "inner_tol": 1e-300,
                           "alpha": [params.alpha[0]] * n_views, "beta": [params.beta[0]] * n_views})
    rows = []
    for n in size_grid:
        for d in dim_grid:
            spec = synth.PlantSpec(n=n, dims=(d,) * n_views, k=max(fixed.k, 2),
                                   informative=(max(1, d // 10),) * n_views, seed=seed)
            ds = synth.generate(spec)
            rows.append((n, d, time_core_loop(ds.views, fixed, repeats=repeats)))
    return rows


def state_bytes(state) -> int:
    fp = optimizer.state_footprint(state)
    return sum(v for k, v in fp.items() if k != "buffer_rows")
