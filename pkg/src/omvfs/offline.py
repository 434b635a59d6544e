"""Full-batch reference solver.

Solves the same graph-regularised, l2,1-penalised orthogonal NMF as the
streaming optimizer, but with every instance in memory.  It is meant for
small problems only and serves as a correctness oracle for the online code,
so the update rules are written out here again in plain batch form instead of
being borrowed from :mod:`omvfs.optimizer`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp
from scipy.spatial.distance import cdist

from .graph import median_bandwidth
from .ingest import unit_norm
from .types import DivergenceError, HyperParams, ValidationError

DEFAULT_CAP = 5000
DEFAULT_MAX_ITERS = 1000


@dataclass
class OfflineResult:
    u: np.ndarray
    v_mats: list
    trace: list = field(default_factory=list)
    sigmas: list = field(default_factory=list)
    normalization: str = "column-l2"


def _dense(x) -> np.ndarray:
    return x.toarray() if sp.issparse(x) else np.asarray(x, dtype=float)


def column_normalize(x: np.ndarray) -> np.ndarray:
    """Scale every nonzero column to unit l2 norm over the whole matrix."""
    return unit_norm(x, axis=0)


def full_laplacian(x: np.ndarray, sigma: float) -> np.ndarray:
    d2 = cdist(x, x, "sqeuclidean")
    w = np.exp(-d2 / (2.0 * sigma ** 2))
    np.fill_diagonal(w, 1.0)
    return np.diag(w.sum(axis=1)) - w


def objective_offline(x_all: Sequence, u: np.ndarray, v_mats: Sequence, params: HyperParams,
                      laplacians: Sequence | None = None) -> float:
    """Batch objective with the soft orthogonality penalty.

    ``laplacians`` must be given whenever some ``alpha_v`` is nonzero.
    """
    total = 0.0
    for i, (x, v) in enumerate(zip(x_all, v_mats)):
        r = _dense(x) - u @ v.T
        total += float(np.sum(r * r))
        if params.alpha[i]:
            total += params.alpha[i] * float(np.trace(u.T @ laplacians[i] @ u))
        if params.beta[i]:
            total += params.beta[i] * float(np.sum(np.linalg.norm(v, axis=1)))
    if params.gamma:
        g = u.T @ u - np.eye(u.shape[1])
        total += params.gamma * float(np.sum(g * g))
    return total


def initial_factors(n: int, dims: Sequence[int], k: int, seed: int) -> tuple[np.ndarray, list]:
    """Random start drawn in the same order as the streaming solver: V first, then U."""
    rng = np.random.default_rng(seed)
    v_mats = [1.0 - rng.random((d, k)) for d in dims]
    u = 1.0 - rng.random((n, k))
    return u, v_mats


def _prepare(x_all, normalize: str, cap: int) -> list:
    x_all = [_dense(x) for x in x_all]
    if not x_all:
        raise ValidationError("at least one view required")
    n = x_all[0].shape[0]
    if any(x.shape[0] != n for x in x_all):
        raise ValidationError("views disagree on the number of rows")
    if n > cap:
        raise ValidationError(f"N={n} exceeds the offline cap of {cap}")
    if any(x.min(initial=0.0) < 0 for x in x_all):
        raise ValidationError("data must be nonnegative")
    if normalize == "column-l2":
        x_all = [column_normalize(x) for x in x_all]
    elif normalize != "none":
        raise ValidationError(f"unknown normalization {normalize!r}")
    return x_all


def _step_u(x_all, u, v_mats, gamma, m_pos, m_neg, eps):
    num = gamma * u
    if m_neg is not None:
        num = num + m_neg @ u
    vtv = np.zeros((u.shape[1], u.shape[1]))
    for x, v in zip(x_all, v_mats):
        num += x @ v
        vtv += v.T @ v
    den = u @ vtv + gamma * (u @ (u.T @ u))
    if m_pos is not None:
        den = den + m_pos @ u
    return u * np.sqrt(num / np.maximum(den, eps))


def _step_v(x, u, v, beta, eps):
    norms = np.maximum(np.linalg.norm(v, axis=1), eps)
    den = v @ (u.T @ u) + 0.5 * beta * (v / norms[:, None])
    return v * np.sqrt((x.T @ u) / np.maximum(den, eps))


def solve_offline(x_all: Sequence, params: HyperParams, *, u0=None, v0=None,
                  sigmas: Sequence[float] | None = None, normalize: str = "column-l2",
                  max_iters: int = DEFAULT_MAX_ITERS, cap: int = DEFAULT_CAP) -> OfflineResult:
    """Alternate batch updates of ``U`` and every ``V`` until the objective settles.

    Parameters
    ----------
    x_all : list of (N, D_v) arrays
    params : HyperParams
        ``inner_tol`` and ``norm_eps`` are honoured; ``max_iters`` replaces
        ``max_inner_iters``.
    u0, v0 : optional starting factors. Drawn from ``params.seed`` otherwise.
    sigmas : optional per-view kernel bandwidths. Median heuristic otherwise.
    normalize : ``"column-l2"`` (global column scaling) or ``"none"``.
    """
    x_all = _prepare(x_all, normalize, cap)
    n, k = x_all[0].shape[0], params.k
    if len(params.alpha) != len(x_all) or len(params.beta) != len(x_all):
        raise ValidationError("alpha/beta arity mismatch")
    u_init, v_init = initial_factors(n, [x.shape[1] for x in x_all], k, params.seed)
    u = u_init if u0 is None else np.array(u0, dtype=float)
    v_mats = v_init if v0 is None else [np.array(v, dtype=float) for v in v0]

    laps = m_pos = m_neg = None
    if any(params.alpha):
        if sigmas is None:
            if isinstance(params.kernel_bandwidth, str):
                sigmas = [median_bandwidth(x, seed=params.seed) for x in x_all]
            else:
                sigmas = [float(params.kernel_bandwidth)] * len(x_all)
        laps = [full_laplacian(x, s) for x, s in zip(x_all, sigmas)]
        m = np.zeros((n, n))
        for a, lap in zip(params.alpha, laps):
            m += a * lap
        m_pos, m_neg = np.maximum(m, 0.0), np.maximum(-m, 0.0)

    eps = params.norm_eps
    trace = [objective_offline(x_all, u, v_mats, params, laps)]
    for _ in range(max_iters):
        u = _step_u(x_all, u, v_mats, params.gamma, m_pos, m_neg, eps)
        v_mats = [_step_v(x, u, v, b, eps) for x, v, b in zip(x_all, v_mats, params.beta)]
        obj = objective_offline(x_all, u, v_mats, params, laps)
        if not np.isfinite(obj):
            raise DivergenceError("offline objective became non-finite")
        prev = trace[-1]
        trace.append(obj)
        if abs(obj - prev) / max(prev, eps) < params.inner_tol:
            break
    return OfflineResult(u=u, v_mats=v_mats, trace=trace, sigmas=list(sigmas or []), normalization=normalize)


def solve_single_view(x, k: int, beta: float = 1.0, gamma: float = 1e7, *, seed: int = 0,
                      tol: float = 1e-4, eps: float = 1e-10, normalize: str = "column-l2",
                      max_iters: int = DEFAULT_MAX_ITERS, cap: int = DEFAULT_CAP) -> OfflineResult:
    """Orthogonal NMF with an l2,1 penalty on ``V`` for a single data matrix."""
    (x,) = _prepare([x], normalize, cap)
    u, (v,) = initial_factors(x.shape[0], [x.shape[1]], k, seed)

    def obj(u, v):
        r = x - u @ v.T
        val = float(np.sum(r * r))
        if beta:
            val += beta * float(np.sum(np.linalg.norm(v, axis=1)))
        if gamma:
            g = u.T @ u - np.eye(k)
            val += gamma * float(np.sum(g * g))
        return val

    trace = [obj(u, v)]
    for _ in range(max_iters):
        num = gamma * u + x @ v
        den = u @ (v.T @ v) + gamma * (u @ (u.T @ u))
        u = u * np.sqrt(num / np.maximum(den, eps))
        norms = np.maximum(np.linalg.norm(v, axis=1), eps)
        den_v = v @ (u.T @ u) + 0.5 * beta * (v / norms[:, None])
        v = v * np.sqrt((x.T @ u) / np.maximum(den_v, eps))
        val = obj(u, v)
        if not np.isfinite(val):
            raise DivergenceError("single-view objective became non-finite")
        prev = trace[-1]
        trace.append(val)
        if abs(val - prev) / max(prev, eps) < tol:
            break
    return OfflineResult(u=u, v_mats=[v], trace=trace, normalization=normalize)
