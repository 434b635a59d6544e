"""Buffered Gaussian similarity graphs and their Laplacians.

Only the block between the incoming chunk and the buffer is ever computed;
the retained part of the previous similarity matrix is reused as is.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.sparse as sp
from scipy.spatial.distance import pdist

from .types import ValidationError

SAMPLE_CAP = 500


@dataclass
class LaplacianPair:
    """Elementwise sign split of ``M = sum_v alpha_v L_v`` into ``m_pos - m_neg``."""

    m_pos: np.ndarray
    m_neg: np.ndarray


def _row_sqnorms(x) -> np.ndarray:
    if sp.issparse(x):
        return np.asarray(x.multiply(x).sum(axis=1)).ravel()
    return np.einsum("ij,ij->i", x, x)


def _sq_distances(a, b) -> np.ndarray:
    cross = a @ b.T
    if sp.issparse(cross):
        cross = cross.toarray()
    d2 = _row_sqnorms(a)[:, None] + _row_sqnorms(b)[None, :] - 2.0 * np.asarray(cross)
    np.maximum(d2, 0.0, out=d2)
    return d2


def gaussian_block(x_new, x_buf, sigma: float) -> np.ndarray:
    """Kernel block ``exp(-||x_i - y_j||^2 / (2 sigma^2))`` of shape (m_t, n_b)."""
    if not sigma > 0:
        raise ValidationError("sigma must be > 0")
    d2 = _sq_distances(x_new, x_buf)
    return np.exp(-d2 / (2.0 * sigma * sigma))


def self_block(x_new, sigma: float) -> np.ndarray:
    """Symmetric kernel block of a chunk with itself, unit diagonal."""
    w = gaussian_block(x_new, x_new, sigma)
    w = 0.5 * (w + w.T)
    np.fill_diagonal(w, 1.0)
    return w


def median_bandwidth(x_sample, seed: int = 0, cap: int = SAMPLE_CAP) -> float:
    """Median pairwise Euclidean distance over at most ``cap`` sampled rows."""
    n = x_sample.shape[0]
    if n < 2:
        raise ValidationError("median bandwidth needs at least 2 rows")
    if n > cap:
        idx = np.sort(np.random.default_rng(seed).choice(n, size=cap, replace=False))
        x_sample = x_sample[idx]
    x = x_sample.toarray() if sp.issparse(x_sample) else np.asarray(x_sample, dtype=float)
    med = float(np.median(pdist(x)))
    if not med > 0:
        raise ValidationError("degenerate sample, supply sigma explicitly")
    return med


def slide_similarity(w_prev: np.ndarray, cross_block: np.ndarray, self_blk: np.ndarray,
                     evict: int = 0) -> np.ndarray:
    """Border the retained similarity matrix with the new chunk's blocks.

    Parameters
    ----------
    w_prev : (n, n) array
        Similarity over the currently buffered rows.
    cross_block : (m_t, n - evict) array
        Similarities between the new rows and the rows that survive eviction.
    self_blk : (m_t, m_t) array
        Similarities among the new rows.
    evict : int or bool
        Number of leading (oldest) rows to drop first. ``True`` is not
        accepted since the row count of the oldest chunk is needed.
    """
    if isinstance(evict, bool):
        raise ValidationError("evict must be a row count")
    n = w_prev.shape[0]
    if w_prev.shape != (n, n) or not 0 <= evict <= n:
        raise ValidationError("w_prev must be square and evict within range")
    kept = w_prev[evict:, evict:]
    m = self_blk.shape[0]
    if self_blk.shape != (m, m):
        raise ValidationError("self block must be square")
    if cross_block.shape != (m, kept.shape[0]):
        raise ValidationError(
            f"cross block has shape {cross_block.shape}, expected {(m, kept.shape[0])}")
    return np.block([[kept, cross_block.T], [cross_block, self_blk]])


def laplacian(w: np.ndarray) -> np.ndarray:
    """Unnormalised Laplacian ``diag(W 1) - W``."""
    if w.ndim != 2 or w.shape[0] != w.shape[1]:
        raise ValidationError("similarity must be square")
    if not np.allclose(w, w.T, rtol=0, atol=1e-12):
        raise ValidationError("similarity must be symmetric")
    lap = -w.copy()
    lap[np.diag_indices_from(lap)] += w.sum(axis=1)
    return lap


def combine_and_split(laplacians: Sequence[np.ndarray], alpha: Sequence[float]) -> LaplacianPair:
    if len(laplacians) != len(alpha):
        raise ValidationError("alpha arity mismatch")
    if not laplacians:
        raise ValidationError("no laplacians given")
    shape = laplacians[0].shape
    m = np.zeros(shape)
    for lap, a in zip(laplacians, alpha):
        if lap.shape != shape:
            raise ValidationError(f"laplacian shape {lap.shape} != {shape}")
        if a:
            m += a * lap
    # M+ = (|M| + M)/2 and M- = (|M| - M)/2 without the rounding of the sum form
    return LaplacianPair(m_pos=np.maximum(m, 0.0), m_neg=np.maximum(-m, 0.0))


def dump_csv(w: np.ndarray, out_dir, tag: str = "") -> tuple[Path, Path]:
    """Debug helper: write ``W`` and its Laplacian as dense CSV files."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    pw, pl = out / f"W{tag}.csv", out / f"L{tag}.csv"
    np.savetxt(pw, w, delimiter=",", fmt="%.17g")
    np.savetxt(pl, laplacian(w), delimiter=",", fmt="%.17g")
    return pw, pl
