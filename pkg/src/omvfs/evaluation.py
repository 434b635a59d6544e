"""Clustering-based scoring of a feature selection: spherical k-means, ACC, NMI."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linear_sum_assignment

from .ingest import unit_norm
from .types import FeatureRanking, ValidationError

MAX_KMEANS_ITERS = 300
N_INIT = 10


@dataclass
class EvalReport:
    labels_pred: list
    acc: float
    nmi: float
    selected_counts: list
    seed: int
    extra: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self))

    def summary(self) -> str:
        return f"ACC={self.acc:.4f} NMI={self.nmi:.4f}"


def _check_pair(pred, truth) -> tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred).ravel()
    truth = np.asarray(truth).ravel()
    if pred.shape != truth.shape:
        raise ValidationError(f"label lengths differ: {pred.size} vs {truth.size}")
    if truth.size == 0:
        raise ValidationError("labels are empty")
    return pred, truth


def contingency(pred, truth) -> np.ndarray:
    """Counts table: rows are predicted clusters, columns true classes."""
    pred, truth = _check_pair(pred, truth)
    _, p_idx = np.unique(pred, return_inverse=True)
    _, t_idx = np.unique(truth, return_inverse=True)
    table = np.zeros((p_idx.max() + 1, t_idx.max() + 1), dtype=np.int64)
    np.add.at(table, (p_idx, t_idx), 1)
    return table


def accuracy(pred, truth) -> float:
    """Best one-to-one cluster-to-class matching accuracy."""
    table = contingency(pred, truth)
    rows, cols = linear_sum_assignment(table, maximize=True)
    return float(table[rows, cols].sum()) / float(table.sum())


def nmi(pred, truth) -> float:
    """Mutual information over ``sqrt(H(pred) H(truth))``, natural logs.

    Two partitions identical up to relabelling score exactly 1, including the
    case of a single shared cluster.
    """
    table = contingency(pred, truth)
    n = table.sum()
    pp = table.sum(axis=1) / n
    pt = table.sum(axis=0) / n
    if table.shape[0] == table.shape[1] and np.count_nonzero(table) == table.shape[0] \
            and np.all(table.max(axis=1) == table.sum(axis=1)):
        return 1.0
    h_p = -np.sum(pp * np.log(pp))
    h_t = -np.sum(pt * np.log(pt))
    if h_p <= 0 or h_t <= 0:
        return 0.0
    nz = table > 0
    pij = table[nz] / n
    mi = np.sum(pij * np.log(pij / np.outer(pp, pt)[nz]))
    return float(min(max(mi / np.sqrt(h_p * h_t), 0.0), 1.0))


def _unit_rows(x) -> np.ndarray:
    x = x.toarray() if sp.issparse(x) else np.asarray(x, dtype=float)
    return unit_norm(x, axis=1)


def _plus_plus(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding with cosine distance ``1 - <x, c>`` on unit rows."""
    n = x.shape[0]
    centers = [x[rng.integers(n)]]
    dist = 1.0 - x @ centers[0]
    for _ in range(1, k):
        dist = np.maximum(dist, 0.0)
        total = dist.sum()
        idx = rng.choice(n, p=dist / total) if total > 0 else rng.integers(n)
        centers.append(x[idx])
        dist = np.minimum(dist, 1.0 - x @ x[idx])
    return np.array(centers)


def _lloyd(x: np.ndarray, centers: np.ndarray, max_iter: int) -> tuple[np.ndarray, float]:
    k = centers.shape[0]
    labels = np.full(x.shape[0], -1)
    for _ in range(max_iter):
        new = np.argmax(x @ centers.T, axis=1)
        if np.array_equal(new, labels):
            break
        labels = new
        for c in range(k):
            members = x[labels == c]
            if len(members) == 0:
                # reseed an empty cluster on the worst-fitting row
                fit = np.sum(x * centers[labels], axis=1)
                centers[c] = x[np.argmin(fit)]
                continue
            mean = members.sum(axis=0)
            norm = np.linalg.norm(mean)
            centers[c] = mean / norm if norm > 0 else members[0]
    cohesion = float(np.sum(x * centers[labels]))
    return labels, cohesion


def spherical_kmeans(x, k: int, seed: int = 0, max_iter: int = MAX_KMEANS_ITERS,
                     n_init: int = N_INIT) -> np.ndarray:
    """Cosine k-means on rows of ``x`` (rows are l2-normalised first).

    ``n_init`` seeded restarts are run and the one with the largest total
    cosine similarity to its centroids is kept.
    """
    if k < 1:
        raise ValidationError("k must be ≥ 1")
    x = _unit_rows(x)
    nonzero = x[np.linalg.norm(x, axis=1) > 0]
    if np.unique(np.round(nonzero, 12), axis=0).shape[0] < k:
        raise ValidationError("degenerate clustering input")
    if k == 1:
        return np.zeros(x.shape[0], dtype=np.int64)
    rng = np.random.default_rng(seed)
    best, best_score = None, -np.inf
    for _ in range(n_init):
        labels, score = _lloyd(x, _plus_plus(x, k, rng), max_iter)
        if score > best_score + 1e-12:
            best, best_score = labels, score
    return best.astype(np.int64)


def spherical_kmeans_multiview(x_selected: Sequence, k: int, seed: int = 0) -> np.ndarray:
    """Row-normalise each view, concatenate with equal weight, cluster by cosine."""
    parts = [_unit_rows(x) for x in x_selected]
    for p in parts:
        nz = p[np.linalg.norm(p, axis=1) > 0]
        if np.unique(np.round(nz, 12), axis=0).shape[0] < k:
            raise ValidationError("degenerate clustering input")
    return spherical_kmeans(np.hstack(parts), k, seed=seed)


def select_columns(x, order: np.ndarray, p: int):
    cols = np.sort(np.asarray(order[:p]))
    return x[:, cols]


def evaluate_selection(rankings: Sequence[FeatureRanking], p: Sequence[int], data: Sequence, truth,
                       k: int, seed: int = 0) -> EvalReport:
    """Cluster on the top ``p_v`` features of every view and score against ``truth``."""
    if len(rankings) != len(data) or len(p) != len(data):
        raise ValidationError("rankings, p and data must have one entry per view")
    selected = []
    for r, p_v, x in zip(rankings, p, data):
        if p_v < 1:
            raise ValidationError("empty selection")
        if p_v > x.shape[1]:
            raise ValidationError(f"view {r.view_id}: p={p_v} exceeds dimension {x.shape[1]}")
        selected.append(select_columns(x, r.order, p_v))
    pred = spherical_kmeans_multiview(selected, k, seed=seed)
    return EvalReport(
        labels_pred=pred.tolist(),
        acc=accuracy(pred, truth),
        nmi=nmi(pred, truth),
        selected_counts=[int(v) for v in p],
        seed=seed,
    )
