"""Domain types, hyperparameters and the model-state container.

Everything that the streaming optimizer mutates lives in :class:`ModelState`;
the other modules only ever read from or write into it through the
functions of :mod:`omvfs.optimizer`.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence, Union

import numpy as np
import scipy.sparse as sp

MEDIAN_HEURISTIC = "median-heuristic"
CHECKPOINT_VERSION = 1

Matrix = Union[np.ndarray, sp.csr_matrix]


class OmvfsError(Exception):
    """Base class of all errors raised by this package."""


class ValidationError(OmvfsError, ValueError):
    """A configuration or input invariant does not hold."""


class StreamError(OmvfsError):
    """A data stream is malformed (desynchronised, negative, truncated)."""


class DivergenceError(OmvfsError, FloatingPointError):
    """A multiplicative update produced non-finite values."""


@dataclass(frozen=True)
class ViewSpec:
    view_id: int
    dim: int
    name: str = ""


@dataclass(frozen=True)
class HyperParams:
    """Hyperparameters of the streaming solver.

    ``alpha`` and ``beta`` carry one weight per view. ``kernel_bandwidth`` is
    either a fixed positive sigma or :data:`MEDIAN_HEURISTIC`, in which case a
    per-view sigma is estimated on the first chunk and frozen.
    """

    k: int
    alpha: tuple[float, ...]
    beta: tuple[float, ...]
    chunk_size: int = 200
    buffer_chunks: int = 2
    # rarely worth changing; large values keep U close to orthonormal
    gamma: float = 1e7
    kernel_bandwidth: Union[float, str] = MEDIAN_HEURISTIC
    inner_tol: float = 1e-4
    max_inner_iters: int = 200
    norm_eps: float = 1e-10
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "alpha", tuple(float(a) for a in self.alpha))
        object.__setattr__(self, "beta", tuple(float(b) for b in self.beta))

    @classmethod
    def uniform(cls, n_views: int, k: int, alpha: float = 1.0, beta: float = 1.0, **kw) -> "HyperParams":
        """Same alpha and beta for every view."""
        return cls(k=k, alpha=(alpha,) * n_views, beta=(beta,) * n_views, **kw)

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "alpha": list(self.alpha),
            "beta": list(self.beta),
            "chunk_size": self.chunk_size,
            "buffer_chunks": self.buffer_chunks,
            "gamma": self.gamma,
            "kernel_bandwidth": self.kernel_bandwidth,
            "inner_tol": self.inner_tol,
            "max_inner_iters": self.max_inner_iters,
            "norm_eps": self.norm_eps,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "HyperParams":
        return cls(**d)


def validate(params: HyperParams, views: Sequence[ViewSpec]) -> None:
    """Raise :class:`ValidationError` naming the first violated invariant."""
    if len(views) < 1:
        raise ValidationError("at least one view required")
    seen = set()
    for v in views:
        if v.dim < 1:
            raise ValidationError(f"view {v.view_id}: dim must be ≥ 1")
        if v.view_id in seen:
            raise ValidationError(f"duplicate view id {v.view_id}")
        seen.add(v.view_id)
    if params.k < 1:
        raise ValidationError("k must be ≥ 1")
    if params.chunk_size < 1:
        raise ValidationError("chunk_size must be ≥ 1")
    if params.buffer_chunks < 1:
        raise ValidationError("buffer_chunks must be ≥ 1")
    if len(params.alpha) != len(views):
        raise ValidationError("alpha arity mismatch")
    if len(params.beta) != len(views):
        raise ValidationError("beta arity mismatch")
    if any(not a >= 0 for a in params.alpha):
        raise ValidationError("alpha must be ≥ 0")
    if any(not b >= 0 for b in params.beta):
        raise ValidationError("beta must be ≥ 0")
    if not params.gamma >= 0:
        raise ValidationError("gamma must be ≥ 0")
    if not params.inner_tol > 0:
        raise ValidationError("inner_tol must be > 0")
    if params.max_inner_iters < 1:
        raise ValidationError("max_inner_iters must be ≥ 1")
    if not params.norm_eps > 0:
        raise ValidationError("norm_eps must be > 0")
    if params.seed < 0:
        raise ValidationError("seed must be unsigned")
    bw = params.kernel_bandwidth
    if isinstance(bw, str):
        if bw != MEDIAN_HEURISTIC:
            raise ValidationError(f"unknown kernel_bandwidth policy {bw!r}")
    elif not bw > 0:
        raise ValidationError("kernel_bandwidth must be > 0")


@dataclass
class MultiViewChunk:
    """One time step of aligned rows across all views.

    ``labels`` are carried for evaluation only; no optimizer routine reads
    them.
    """

    t: int
    per_view: list
    labels: np.ndarray | None = None

    @property
    def rows(self) -> int:
        return self.per_view[0].shape[0] if self.per_view else 0

    def check(self) -> None:
        n = self.rows
        for v, x in enumerate(self.per_view):
            if x.shape[0] != n:
                raise StreamError(f"view {v} has {x.shape[0]} rows, expected {n}")
            data = x.data if sp.issparse(x) else x
            if data.size and data.min() < 0:
                raise StreamError(f"view {v} contains negative values")
        if self.labels is not None and len(self.labels) != n:
            raise StreamError("label count does not match chunk rows")


@dataclass
class BufferState:
    """Sliding window over the most recent chunks (oldest first)."""

    x_buf: list
    u_buf: np.ndarray
    w_buf: list
    chunk_sizes: list = field(default_factory=list)

    @classmethod
    def empty(cls, dims: Sequence[int], k: int) -> "BufferState":
        return cls(
            x_buf=[np.zeros((0, d)) for d in dims],
            u_buf=np.zeros((0, k)),
            w_buf=[np.zeros((0, 0)) for _ in dims],
            chunk_sizes=[],
        )

    @property
    def rows(self) -> int:
        return self.u_buf.shape[0]

    @property
    def chunk_boundaries(self) -> list[int]:
        """Row offset at which each buffered chunk starts."""
        return [int(x) for x in np.concatenate([[0], np.cumsum(self.chunk_sizes)[:-1]])] if self.chunk_sizes else []


@dataclass
class AggregateState:
    a: np.ndarray
    b: list

    @classmethod
    def zeros(cls, dims: Sequence[int], k: int) -> "AggregateState":
        return cls(a=np.zeros((k, k)), b=[np.zeros((d, k)) for d in dims])


@dataclass
class ModelState:
    params: HyperParams
    views: list
    v_mats: list
    agg: AggregateState
    buffer: BufferState
    rng: np.random.Generator
    sigmas: list = field(default_factory=list)
    t: int = 0
    objective_trace: list = field(default_factory=list)

    @property
    def n_views(self) -> int:
        return len(self.views)


@dataclass
class FeatureRanking:
    view_id: int
    order: np.ndarray
    scores: np.ndarray

    def top(self, p: int) -> np.ndarray:
        return self.order[:p]

    def to_dict(self) -> dict:
        return {"view": self.view_id, "order": self.order.tolist(), "scores": self.scores.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureRanking":
        return cls(int(d["view"]), np.asarray(d["order"], dtype=np.int64), np.asarray(d["scores"], dtype=float))


def new_state(params: HyperParams, views: Sequence[ViewSpec]) -> ModelState:
    """Fresh model: V uniform on (0, 1], empty buffer, zero aggregates."""
    validate(params, views)
    rng = np.random.default_rng(params.seed)
    dims = [v.dim for v in views]
    # 1 - U[0, 1) lies in (0, 1]
    v_mats = [1.0 - rng.random((d, params.k)) for d in dims]
    sigmas = [] if isinstance(params.kernel_bandwidth, str) else [float(params.kernel_bandwidth)] * len(views)
    return ModelState(
        params=params,
        views=list(views),
        v_mats=v_mats,
        agg=AggregateState.zeros(dims, params.k),
        buffer=BufferState.empty(dims, params.k),
        rng=rng,
        sigmas=sigmas,
    )


def check_state(state: ModelState) -> None:
    """Assert every shape and sign invariant of ``state``.

    Raises :class:`ValidationError` on the first violation.
    """
    k = state.params.k
    buf = state.buffer
    n = buf.rows

    def fail(msg):
        raise ValidationError(msg)

    for spec, v in zip(state.views, state.v_mats):
        if v.shape != (spec.dim, k):
            fail(f"v_mats[{spec.view_id}] has shape {v.shape}")
        if v.min(initial=0.0) < 0:
            fail(f"v_mats[{spec.view_id}] has negative entries")
    a = state.agg.a
    if a.shape != (k, k) or not np.allclose(a, a.T, rtol=1e-12, atol=0) or a.min(initial=0.0) < 0:
        fail("aggregate A is not a symmetric nonnegative K x K matrix")
    for spec, b in zip(state.views, state.agg.b):
        if b.shape != (spec.dim, k) or b.min(initial=0.0) < 0:
            fail(f"aggregate B[{spec.view_id}] malformed")
    if buf.u_buf.shape[1] != k or buf.u_buf.min(initial=0.0) < 0:
        fail("u_buf malformed")
    if sum(buf.chunk_sizes) != n or len(buf.chunk_sizes) > state.params.buffer_chunks:
        fail("buffer chunk bookkeeping inconsistent")
    for v, (x, w) in enumerate(zip(buf.x_buf, buf.w_buf)):
        if x.shape[0] != n or w.shape != (n, n):
            fail(f"buffer rows disagree for view {v}")
        if n:
            if not np.array_equal(w, w.T):
                fail(f"w_buf[{v}] not symmetric")
            if w.min() < 0 or w.max() > 1 or not np.all(np.diag(w) == 1.0):
                fail(f"w_buf[{v}] entries outside [0, 1] or diagonal != 1")


# -- checkpointing ---------------------------------------------------------

def _pack_matrix(arrays: dict, key: str, x) -> None:
    if sp.issparse(x):
        x = sp.csr_matrix(x)
        arrays[key + ".data"] = x.data
        arrays[key + ".indices"] = x.indices
        arrays[key + ".indptr"] = x.indptr
        arrays[key + ".shape"] = np.asarray(x.shape, dtype=np.int64)
    else:
        arrays[key] = np.asarray(x)


def _unpack_matrix(z, key: str):
    if key + ".data" in z:
        shape = tuple(int(s) for s in z[key + ".shape"])
        return sp.csr_matrix((z[key + ".data"], z[key + ".indices"], z[key + ".indptr"]), shape=shape)
    return z[key]


def save_state(state: ModelState, path) -> None:
    """Write a self-describing ``.npz`` checkpoint (JSON header + arrays)."""
    meta = {
        "format": "omvfs-checkpoint",
        "version": CHECKPOINT_VERSION,
        "params": state.params.to_dict(),
        "views": [{"id": v.view_id, "dim": v.dim, "name": v.name} for v in state.views],
        "t": state.t,
        "sigmas": list(state.sigmas),
        "chunk_sizes": list(state.buffer.chunk_sizes),
        "rng_state": state.rng.bit_generator.state,
        "objective_trace": state.objective_trace,
    }
    arrays = {"meta": np.asarray(json.dumps(meta))}
    arrays["agg.a"] = state.agg.a
    arrays["u_buf"] = state.buffer.u_buf
    for i in range(state.n_views):
        arrays[f"v.{i}"] = state.v_mats[i]
        arrays[f"agg.b.{i}"] = state.agg.b[i]
        arrays[f"w_buf.{i}"] = state.buffer.w_buf[i]
        _pack_matrix(arrays, f"x_buf.{i}", state.buffer.x_buf[i])
    with open(Path(path), "wb") as fh:
        np.savez(fh, **arrays)


def load_state(path) -> ModelState:
    with np.load(Path(path), allow_pickle=False) as z:
        if "meta" not in z.files:
            raise ValidationError(f"{path}: not a checkpoint")
        meta = json.loads(str(z["meta"]))
        if meta.get("format") != "omvfs-checkpoint":
            raise ValidationError(f"{path}: not a checkpoint")
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ValidationError(f"{path}: unsupported checkpoint version {meta.get('version')}")
        views = [ViewSpec(v["id"], v["dim"], v["name"]) for v in meta["views"]]
        n = len(views)
        rng = np.random.default_rng()
        rng.bit_generator.state = meta["rng_state"]
        return ModelState(
            params=HyperParams.from_dict(meta["params"]),
            views=views,
            v_mats=[z[f"v.{i}"] for i in range(n)],
            agg=AggregateState(a=z["agg.a"], b=[z[f"agg.b.{i}"] for i in range(n)]),
            buffer=BufferState(
                x_buf=[_unpack_matrix(z, f"x_buf.{i}") for i in range(n)],
                u_buf=z["u_buf"],
                w_buf=[z[f"w_buf.{i}"] for i in range(n)],
                chunk_sizes=list(meta["chunk_sizes"]),
            ),
            rng=rng,
            sigmas=list(meta["sigmas"]),
            t=meta["t"],
            objective_trace=meta["objective_trace"],
        )
