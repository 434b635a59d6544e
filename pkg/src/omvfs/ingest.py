"""Reading multi-view streams from disk, one aligned chunk at a time.

A stream is described by a JSON manifest::

    {"views": [{"id": 0, "name": "text", "dim": 996, "path": "v0.csv", "format": "dense"}, ...],
     "labels": "labels.txt",
     "rows": 1523}

Dense views are header-less CSV files with one instance per line. Sparse
views are text COO files whose first line holds ``rows cols`` (a leading
``%`` is tolerated) followed by ``row col value`` triples, 0-based and sorted
by row. Labels are one integer per line.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
import scipy.sparse as sp

from .types import MultiViewChunk, StreamError, ValidationError, ViewSpec

NORM_MODES = ("none", "row-l2", "column-l2-in-chunk")


@dataclass(frozen=True)
class Source:
    path: Path
    format: str = "dense"


@dataclass(frozen=True)
class StreamDescriptor:
    views: tuple
    sources: tuple
    total_rows: int | None = None
    label_source: Path | None = None

    def __post_init__(self):
        if len(self.views) != len(self.sources):
            raise ValidationError("sources arity must equal views arity")


def _read_coo_header(path: Path) -> tuple[int, int]:
    with open(path) as fh:
        first = fh.readline()
    parts = first.replace("%", " ").split()
    if len(parts) != 2:
        raise ValidationError(f"{path}: missing 'rows cols' header")
    return int(parts[0]), int(parts[1])


def _read_dense_width(path: Path) -> int | None:
    with open(path) as fh:
        for line in fh:
            if line.strip():
                return len(line.split(","))
    return None


def read_manifest(locator) -> StreamDescriptor:
    """Parse and validate a manifest; relative paths resolve against its directory."""
    path = Path(locator)
    if not path.is_file():
        raise FileNotFoundError(f"manifest not found: {path}")
    doc = json.loads(path.read_text())
    base = path.parent
    entries = doc.get("views") or []
    if not entries:
        raise ValidationError("at least one view required")
    views, sources, ids = [], [], set()
    for e in entries:
        vid = int(e["id"])
        if vid in ids:
            raise ValidationError(f"duplicate view id {vid}")
        ids.add(vid)
        spec = ViewSpec(vid, int(e["dim"]), str(e.get("name", "")))
        if spec.dim < 1:
            raise ValidationError(f"view {vid}: dim must be ≥ 1")
        src = Source(base / e["path"], e.get("format", "dense"))
        if not src.path.is_file():
            raise FileNotFoundError(f"view {vid}: data file not found: {src.path}")
        if src.format == "sparse":
            _, cols = _read_coo_header(src.path)
        elif src.format == "dense":
            cols = _read_dense_width(src.path)
        else:
            raise ValidationError(f"view {vid}: unknown format {src.format!r}")
        if cols is not None and cols != spec.dim:
            raise ValidationError(f"view {vid}: manifest dim {spec.dim} disagrees with data ({cols} columns)")
        views.append(spec)
        sources.append(src)
    labels = doc.get("labels")
    label_path = base / labels if labels else None
    if label_path is not None and not label_path.is_file():
        raise FileNotFoundError(f"labels not found: {label_path}")
    rows = doc.get("rows")
    return StreamDescriptor(tuple(views), tuple(sources), None if rows is None else int(rows), label_path)


class _DenseView:
    def __init__(self, path: Path, dim: int):
        self._fh = open(path)
        self.dim = dim

    def take(self, m: int):
        lines = []
        while len(lines) < m:
            line = self._fh.readline()
            if not line:
                break
            if line.strip():
                lines.append(line)
        if not lines:
            return np.zeros((0, self.dim))
        x = np.loadtxt(lines, delimiter=",", ndmin=2, dtype=float)
        if x.shape[1] != self.dim:
            raise StreamError(f"expected {self.dim} columns, found {x.shape[1]}")
        return x

    def close(self):
        self._fh.close()


class _SparseView:
    def __init__(self, path: Path, dim: int):
        self._fh = open(path)
        self._fh.readline()
        self._rows, cols = _read_coo_header(path)
        self.dim = dim
        self._next = 0
        self._pending = None

    def take(self, m: int):
        stop = min(self._next + m, self._rows)
        r, c, v = [], [], []
        while True:
            if self._pending is None:
                line = self._fh.readline()
                if not line:
                    break
                if not line.strip():
                    continue
                i, j, val = line.split()
                self._pending = (int(i), int(j), float(val))
            i, j, val = self._pending
            if i < self._next:
                raise StreamError("sparse entries are not sorted by row")
            if i >= stop:
                break
            r.append(i - self._next)
            c.append(j)
            v.append(val)
            self._pending = None
        n = stop - self._next
        self._next = stop
        return sp.csr_matrix((v, (r, c)), shape=(n, self.dim))

    def close(self):
        self._fh.close()


class ChunkReader:
    """Single-consumer reader yielding aligned chunks of at most ``m`` rows."""

    def __init__(self, descriptor: StreamDescriptor):
        self.descriptor = descriptor
        self._views = [
            (_SparseView if s.format == "sparse" else _DenseView)(s.path, spec.dim)
            for spec, s in zip(descriptor.views, descriptor.sources)
        ]
        self._labels = open(descriptor.label_source) if descriptor.label_source else None
        self._row = 0
        self._t = 0
        self._done = False

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def close(self):
        for v in self._views:
            v.close()
        if self._labels:
            self._labels.close()

    def next_chunk(self, m: int) -> MultiViewChunk | None:
        """Return the next chunk, or ``None`` once the stream is exhausted."""
        if m < 1:
            raise ValidationError("m must be ≥ 1")
        if self._done:
            return None
        blocks = [v.take(m) for v in self._views]
        counts = [b.shape[0] for b in blocks]
        expected = max(counts)
        if self.descriptor.total_rows is not None:
            expected = min(m, max(self.descriptor.total_rows - self._row, 0))
            if max(counts) > expected:
                raise StreamError(f"stream has more than the declared {self.descriptor.total_rows} rows")
        for spec, c in zip(self.descriptor.views, counts):
            if c != expected:
                raise StreamError(
                    f"view {spec.view_id} ended at row {self._row + c}, expected {self._row + expected}")
        if expected == 0:
            self._done = True
            return None
        for spec, b in zip(self.descriptor.views, blocks):
            data = b.data if sp.issparse(b) else b
            if data.size and data.min() < 0:
                raise StreamError(f"view {spec.view_id}: negative value near row {self._row}")
        labels = None
        if self._labels is not None:
            labels = np.array([int(self._labels.readline()) for _ in range(expected)], dtype=np.int64)
        self._row += expected
        self._t += 1
        return MultiViewChunk(t=self._t, per_view=blocks, labels=labels)


def open_stream(manifest) -> ChunkReader:
    return ChunkReader(read_manifest(manifest))


def iter_chunks(manifest, m: int, mode: str = "none") -> Iterator[MultiViewChunk]:
    with open_stream(manifest) as reader:
        while (chunk := reader.next_chunk(m)) is not None:
            yield normalize_chunk(chunk, mode)


def load_all(manifest) -> tuple[list, np.ndarray | None, StreamDescriptor]:
    """Whole stream in memory (evaluation and the offline solver only)."""
    desc = read_manifest(manifest)
    views, labels = [[] for _ in desc.views], []
    with ChunkReader(desc) as reader:
        while (chunk := reader.next_chunk(4096)) is not None:
            for i, x in enumerate(chunk.per_view):
                views[i].append(x)
            if chunk.labels is not None:
                labels.append(chunk.labels)
    out = []
    for spec, parts in zip(desc.views, views):
        if not parts:
            out.append(np.zeros((0, spec.dim)))
        elif sp.issparse(parts[0]):
            out.append(sp.vstack(parts, format="csr"))
        else:
            out.append(np.vstack(parts))
    lab = np.concatenate(labels) if labels else None
    return out, lab, desc


def unit_norm(x, axis: int):
    """Scale every nonzero row (``axis=1``) or column (``axis=0``) to unit l2 norm.

    Vectors are divided by their largest magnitude before the norm is taken,
    so tiny but nonzero vectors do not underflow to zero.
    """
    if sp.issparse(x):
        x = sp.csr_matrix(x, dtype=float)
        peak = abs(x).max(axis=axis).toarray().ravel()
        inv = 1.0 / np.where(peak > 0, peak, 1.0)
        scaled = sp.diags(inv) @ x if axis == 1 else x @ sp.diags(inv)
        norms = np.sqrt(np.asarray(scaled.multiply(scaled).sum(axis=axis)).ravel())
        inv = 1.0 / np.where(norms > 0, norms, 1.0)
        return sp.csr_matrix(sp.diags(inv) @ scaled if axis == 1 else scaled @ sp.diags(inv))
    x = np.asarray(x, dtype=float)
    peak = np.abs(x).max(axis=axis, keepdims=True, initial=0.0)
    scaled = x / np.where(peak > 0, peak, 1.0)
    norms = np.sqrt(np.einsum("ij,ij->i" if axis == 1 else "ij,ij->j", scaled, scaled))
    norms = norms[:, None] if axis == 1 else norms[None, :]
    return scaled / np.where(norms > 0, norms, 1.0)


def normalize_matrix(x, mode: str):
    if mode == "none":
        return x
    if mode == "row-l2":
        return unit_norm(x, axis=1)
    if mode == "column-l2-in-chunk":
        return unit_norm(x, axis=0)
    raise ValidationError(f"unknown normalization {mode!r}; expected one of {NORM_MODES}")


def normalize_chunk(chunk: MultiViewChunk, mode: str = "row-l2") -> MultiViewChunk:
    """Scale rows or in-chunk columns to unit l2 norm; zero vectors pass through."""
    if mode == "none":
        return chunk
    views = [normalize_matrix(x, mode) for x in chunk.per_view]
    return MultiViewChunk(t=chunk.t, per_view=views, labels=chunk.labels)


def write_dense(path, x: np.ndarray) -> None:
    np.savetxt(path, np.asarray(x), delimiter=",", fmt="%.17g")


def write_sparse(path, x) -> None:
    x = sp.coo_matrix(x)
    order = np.lexsort((x.col, x.row))
    with open(path, "w") as fh:
        fh.write(f"{x.shape[0]} {x.shape[1]}\n")
        for i, j, v in zip(x.row[order], x.col[order], x.data[order]):
            fh.write(f"{i} {j} {float(v)!r}\n")


def write_labels(path, labels: Sequence[int]) -> None:
    with open(path, "w") as fh:
        fh.writelines(f"{int(y)}\n" for y in labels)


def write_manifest(path, views: Sequence[ViewSpec], files: Sequence[str], formats: Sequence[str],
                   labels: str | None = None, rows: int | None = None) -> None:
    doc = {
        "views": [
            {"id": v.view_id, "name": v.name, "dim": v.dim, "path": f, "format": fmt}
            for v, f, fmt in zip(views, files, formats)
        ]
    }
    if labels is not None:
        doc["labels"] = labels
    if rows is not None:
        doc["rows"] = rows
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")
