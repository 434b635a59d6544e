"""Per-chunk alternating multiplicative updates and the aggregation recurrences.

One call to :func:`process_chunk` performs a full time step of the streaming
solver:

1. slide the buffer (evicting the oldest chunk when it is full) and draw a
   fresh random indicator block for the incoming rows,
2. alternate one update of the buffered indicator ``U`` with one update of
   every view's feature-selection matrix ``V`` until the buffered objective
   settles,
3. fold the new chunk into the running sums ``A`` and ``B``.

The ``V`` update only reads ``A``, ``B``, the newest chunk and its indicator
rows, so the history beyond the buffer never has to be kept.
"""

from __future__ import annotations

import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import graph
from .types import (
    DivergenceError,
    FeatureRanking,
    ModelState,
    MultiViewChunk,
    ValidationError,
)


@dataclass
class ChunkReport:
    t: int
    iters: int
    objective: float
    millis: float
    trace: list = field(default_factory=list)
    converged: bool = False

    def to_json_dict(self) -> dict:
        return {"t": self.t, "iters": self.iters, "objective": self.objective, "millis": self.millis}


def _dense(x) -> np.ndarray:
    return x.toarray() if sp.issparse(x) else x


def _vstack(a, b):
    if sp.issparse(a) or sp.issparse(b):
        return sp.vstack([sp.csr_matrix(a), sp.csr_matrix(b)], format="csr")
    return np.vstack([a, b])


def _matmul(x, y) -> np.ndarray:
    out = x @ y
    return np.asarray(out.toarray() if sp.issparse(out) else out)


def _check_finite(a: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(a)):
        raise DivergenceError(f"non-finite values in {what}")


def l21_norm(v: np.ndarray) -> float:
    """Sum of the Euclidean norms of the rows."""
    return float(np.sqrt(np.einsum("ij,ij->i", v, v)).sum())


def current_rows(state: ModelState) -> slice:
    """Row slice of the newest chunk inside the buffer."""
    buf = state.buffer
    if not buf.chunk_sizes:
        return slice(0, 0)
    return slice(buf.rows - buf.chunk_sizes[-1], buf.rows)


def current_u(state: ModelState) -> np.ndarray:
    return state.buffer.u_buf[current_rows(state)]


def _resolve_sigmas(state: ModelState, chunk: MultiViewChunk) -> None:
    if state.sigmas:
        return
    state.sigmas = [graph.median_bandwidth(x, seed=state.params.seed) for x in chunk.per_view]


def init_chunk(state: ModelState, chunk: MultiViewChunk) -> None:
    """Slide the buffer forward by one chunk and seed its indicator rows."""
    m_t = chunk.rows
    if m_t < 1:
        raise ValidationError("chunk has no rows")
    if len(chunk.per_view) != state.n_views:
        raise ValidationError(f"chunk has {len(chunk.per_view)} views, model has {state.n_views}")
    for spec, x in zip(state.views, chunk.per_view):
        if x.shape[1] != spec.dim:
            raise ValidationError(f"view {spec.view_id}: chunk has {x.shape[1]} features, expected {spec.dim}")
    chunk.check()
    _resolve_sigmas(state, chunk)

    buf = state.buffer
    evict = 0
    if len(buf.chunk_sizes) >= state.params.buffer_chunks:
        evict = buf.chunk_sizes[0]
        buf.chunk_sizes = buf.chunk_sizes[1:]

    for v, x_new in enumerate(chunk.per_view):
        x_new = sp.csr_matrix(x_new, dtype=float) if sp.issparse(x_new) else np.asarray(x_new, dtype=float)
        kept = buf.x_buf[v][evict:]
        sigma = state.sigmas[v]
        cross = graph.gaussian_block(x_new, kept, sigma)
        buf.w_buf[v] = graph.slide_similarity(buf.w_buf[v], cross, graph.self_block(x_new, sigma), evict)
        buf.x_buf[v] = _vstack(kept, x_new)

    # 1 - U[0, 1) lies in (0, 1]
    u_new = 1.0 - state.rng.random((m_t, state.params.k))
    buf.u_buf = np.vstack([buf.u_buf[evict:], u_new])
    buf.chunk_sizes = buf.chunk_sizes + [m_t]


def buffer_laplacians(state: ModelState) -> list:
    return [graph.laplacian(w) for w in state.buffer.w_buf]


def laplacian_pair(state: ModelState, laps: list | None = None) -> graph.LaplacianPair:
    if laps is None:
        laps = buffer_laplacians(state)
    return graph.combine_and_split(laps, state.params.alpha)


def update_u(state: ModelState, lap: graph.LaplacianPair | None = None) -> None:
    """One multiplicative step on the buffered indicator matrix.

    ``U <- U * sqrt((sum_v X_v V_v + gamma U + M- U) /
                    (U sum_v V_v'V_v + gamma U U'U + M+ U))``
    with denominators floored at ``norm_eps``.
    """
    p = state.params
    buf = state.buffer
    if buf.rows == 0:
        raise ValidationError("buffer is empty")
    if lap is None:
        lap = laplacian_pair(state)
    u = buf.u_buf
    num = p.gamma * u + lap.m_neg @ u
    vtv = np.zeros((p.k, p.k))
    for x, v in zip(buf.x_buf, state.v_mats):
        num += _matmul(x, v)
        vtv += v.T @ v
    den = u @ vtv + p.gamma * (u @ (u.T @ u)) + lap.m_pos @ u
    np.maximum(den, p.norm_eps, out=den)
    with np.errstate(invalid="ignore", over="ignore"):
        new = u * np.sqrt(num / den)
    _check_finite(new, "U")
    buf.u_buf = new


def update_v(state: ModelState, view: int) -> None:
    """One multiplicative step on ``V`` of one view.

    ``V <- V * sqrt((B + X_t'U_t) / (V (A + U_t'U_t) + beta/2 D V))`` where
    ``D = diag(1 / ||v_j||)``.
    """
    p = state.params
    rows = current_rows(state)
    u_t = state.buffer.u_buf[rows]
    x_t = state.buffer.x_buf[view][rows]
    v = state.v_mats[view]
    num = state.agg.b[view] + _matmul(x_t.T, u_t)
    a = state.agg.a + u_t.T @ u_t
    row_norm = np.sqrt(np.einsum("ij,ij->i", v, v))
    d_v = v / np.maximum(row_norm, p.norm_eps)[:, None]
    den = v @ a + 0.5 * p.beta[view] * d_v
    np.maximum(den, p.norm_eps, out=den)
    with np.errstate(invalid="ignore", over="ignore"):
        new = v * np.sqrt(num / den)
    _check_finite(new, f"V[{view}]")
    state.v_mats[view] = new


def buffered_objective(state: ModelState, laps: list | None = None) -> float:
    """Objective restricted to the buffered rows.

    ``sum_v (||X_v - U V_v'||_F^2 + alpha_v tr(U' L_v U) + beta_v ||V_v||_{2,1})
    + gamma ||U'U - I||_F^2``

    ``laps`` may carry the buffer Laplacians when the caller already has them.
    """
    p = state.params
    buf = state.buffer
    u = buf.u_buf
    utu = u.T @ u
    total = 0.0
    if laps is None and any(p.alpha):
        laps = buffer_laplacians(state)
    for v_idx, (x, v) in enumerate(zip(buf.x_buf, state.v_mats)):
        # ||X||^2 - 2<XV, U> + <V'V, U'U>; cancellation stays near 1e-13
        xx = x.multiply(x).sum() if sp.issparse(x) else np.einsum("ij,ij->", x, x)
        rec = xx - 2.0 * np.einsum("ij,ij->", _matmul(x, v), u) + np.einsum("ij,ij->", v.T @ v, utu)
        total += max(float(rec), 0.0)
        if p.alpha[v_idx]:
            total += p.alpha[v_idx] * float(np.sum(u * (laps[v_idx] @ u)))
        if p.beta[v_idx]:
            total += p.beta[v_idx] * l21_norm(v)
    if p.gamma:
        g = utu - np.eye(p.k)
        total += p.gamma * float(np.einsum("ij,ij->", g, g))
    return total


def aggregate(state: ModelState, u_t: np.ndarray, chunk: MultiViewChunk) -> None:
    """Fold a finished chunk into ``A += U_t'U_t`` and ``B_v += X_t'U_t``."""
    k = state.params.k
    if u_t.shape != (chunk.rows, k):
        raise ValidationError(f"u_t has shape {u_t.shape}, expected {(chunk.rows, k)}")
    if len(chunk.per_view) != state.n_views:
        raise ValidationError("view count mismatch")
    state.agg.a = state.agg.a + u_t.T @ u_t
    for v, x in enumerate(chunk.per_view):
        if x.shape[1] != state.agg.b[v].shape[0]:
            raise ValidationError(f"view {v}: dimension mismatch")
        state.agg.b[v] = state.agg.b[v] + _matmul(x.T, u_t)


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("OMVFS_THREADS", "1")))
    except ValueError:
        return 1


def process_chunk(state: ModelState, chunk: MultiViewChunk, threads: int | None = None) -> ChunkReport:
    """Run one full time step on ``chunk``; see the module docstring."""
    if chunk.rows == 0:
        return ChunkReport(t=state.t, iters=0, objective=float("nan"), millis=0.0)
    p = state.params
    start = time.perf_counter()
    init_chunk(state, chunk)
    laps = buffer_laplacians(state)
    lap = laplacian_pair(state, laps)
    threads = _threads() if threads is None else threads
    pool = ThreadPoolExecutor(threads) if threads > 1 and state.n_views > 1 else None

    trace = [buffered_objective(state, laps)]
    iters = 0
    converged = False
    try:
        for iters in range(1, p.max_inner_iters + 1):
            update_u(state, lap)
            # each view reads the same U snapshot and writes only its own V
            if pool is None:
                for v in range(state.n_views):
                    update_v(state, v)
            else:
                list(pool.map(lambda v: update_v(state, v), range(state.n_views)))
            obj = buffered_objective(state, laps)
            if not np.isfinite(obj):
                raise DivergenceError("objective became non-finite")
            prev = trace[-1]
            trace.append(obj)
            if abs(obj - prev) / max(prev, p.norm_eps) < p.inner_tol:
                converged = True
                break
    finally:
        if pool is not None:
            pool.shutdown()

    rows = current_rows(state)
    aggregate(state, state.buffer.u_buf[rows], _as_float_chunk(chunk))
    state.t += 1
    state.objective_trace.append(trace)
    millis = (time.perf_counter() - start) * 1e3
    return ChunkReport(t=state.t, iters=iters, objective=trace[-1], millis=millis,
                       trace=trace, converged=converged)


def _as_float_chunk(chunk: MultiViewChunk) -> MultiViewChunk:
    views = [sp.csr_matrix(x, dtype=float) if sp.issparse(x) else np.asarray(x, dtype=float)
             for x in chunk.per_view]
    return MultiViewChunk(t=chunk.t, per_view=views)


def rank_features(state: ModelState, view: int) -> FeatureRanking:
    """Order features by descending row norm of ``V``, ties by ascending index."""
    v = state.v_mats[view]
    return ranking_from_matrix(v, state.views[view].view_id)


def ranking_from_matrix(v: np.ndarray, view_id: int = 0) -> FeatureRanking:
    scores = np.sqrt(np.einsum("ij,ij->i", v, v))
    # lexsort keys: last one is primary
    order = np.lexsort((np.arange(len(scores)), -scores))
    return FeatureRanking(view_id=view_id, order=order, scores=scores[order])


def state_footprint(state: ModelState) -> dict:
    """Bytes held by each retained container; nothing here grows with N."""
    def nbytes(x):
        if sp.issparse(x):
            return x.data.nbytes + x.indices.nbytes + x.indptr.nbytes
        return x.nbytes

    buf = state.buffer
    return {
        "v_mats": sum(v.nbytes for v in state.v_mats),
        "agg": state.agg.a.nbytes + sum(b.nbytes for b in state.agg.b),
        "x_buf": sum(nbytes(x) for x in buf.x_buf),
        "u_buf": buf.u_buf.nbytes,
        "w_buf": sum(w.nbytes for w in buf.w_buf),
        "buffer_rows": buf.rows,
    }
