"""Feature-matrix storage and the matrix/vector kernels used by the solvers.

Two layouts are supported: dense row-major and CSR.  Every kernel accepts an
optional :class:`WorkerPool`; when one is given, rows (or active-set entries)
are split into contiguous blocks, one per worker, and partial results are
combined with a fixed-shape pairwise tree so the output only depends on the
worker count, never on thread timing.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from enum import Enum

import numpy as np
import scipy.sparse as sp

__all__ = [
    "BoundsError",
    "DimensionError",
    "FeatureMatrix",
    "Layout",
    "WorkerPool",
    "as_index_set",
    "as_vector",
    "gathered_nbytes",
    "axpy",
    "dot",
    "gather_rows",
    "gram_matvec",
    "masked_gram_matvec",
    "masked_matvec_transpose",
    "matvec",
    "matvec_transpose",
    "norm2",
    "pairwise_sum",
    "row_ranges",
    "weighted_column_sq_sums",
]

# Rows touched per step by the index-indirect kernels; bounds their scratch.
CHUNK_ROWS = 256


class DimensionError(ValueError):
    """Raised when vector lengths and matrix dimensions disagree."""


class BoundsError(IndexError):
    """Raised for row indices outside ``[0, n_rows)``."""


class Layout(str, Enum):
    DENSE = "dense"
    CSR = "csr"


def _frozen(a):
    view = a.view()
    view.flags.writeable = False
    return view


class FeatureMatrix:
    """Immutable ``l x n`` feature matrix, dense row-major or CSR.

    Use :meth:`dense`, :meth:`csr` or :meth:`from_scipy` to build one.  CSR
    column indices are 0-based and strictly ascending inside each row; empty
    rows are allowed.
    """

    __slots__ = ("layout", "n_rows", "n_cols", "values", "row_offsets",
                 "col_indices", "_op", "_blocks")

    def __init__(self, layout, n_rows, n_cols, values, row_offsets=None,
                 col_indices=None):
        self.layout = Layout(layout)
        self.n_rows = int(n_rows)
        self.n_cols = int(n_cols)
        if self.n_rows < 0 or self.n_cols < 0:
            raise ValueError("matrix dimensions must be nonnegative")
        values = np.ascontiguousarray(values, dtype=np.float64)
        if self.layout is Layout.DENSE:
            values = values.reshape(-1)
            if values.size != self.n_rows * self.n_cols:
                raise DimensionError(
                    f"dense values length {values.size} != "
                    f"{self.n_rows}*{self.n_cols}")
            self.values = _frozen(values)
            self.row_offsets = None
            self.col_indices = None
            self._op = _frozen(values.reshape(self.n_rows, self.n_cols))
        else:
            row_offsets = np.ascontiguousarray(row_offsets, dtype=np.int64)
            col_indices = np.ascontiguousarray(col_indices, dtype=np.int64)
            _check_csr(self.n_rows, self.n_cols, row_offsets, col_indices,
                       values)
            self.values = _frozen(values)
            self.row_offsets = _frozen(row_offsets)
            self.col_indices = _frozen(col_indices)
            self._op = sp.csr_matrix(
                (self.values, self.col_indices, self.row_offsets),
                shape=(self.n_rows, self.n_cols), copy=False)
        self._blocks = {}

    @classmethod
    def dense(cls, array):
        array = np.asarray(array, dtype=np.float64)
        if array.ndim != 2:
            raise DimensionError("dense feature matrix must be 2-D")
        return cls(Layout.DENSE, array.shape[0], array.shape[1], array)

    @classmethod
    def csr(cls, row_offsets, col_indices, values, n_cols):
        row_offsets = np.asarray(row_offsets, dtype=np.int64)
        return cls(Layout.CSR, len(row_offsets) - 1, n_cols, values,
                   row_offsets, col_indices)

    @classmethod
    def from_scipy(cls, matrix):
        m = sp.csr_matrix(matrix, dtype=np.float64)
        m.sort_indices()
        return cls.csr(m.indptr, m.indices, m.data, m.shape[1])

    @property
    def shape(self):
        return (self.n_rows, self.n_cols)

    @property
    def is_sparse(self):
        return self.layout is Layout.CSR

    @property
    def nnz(self):
        """Stored entries for CSR, nonzero values for dense."""
        if self.is_sparse:
            return int(self.row_offsets[-1])
        return int(np.count_nonzero(self.values))

    @property
    def nbytes(self):
        total = self.values.nbytes
        if self.is_sparse:
            total += self.row_offsets.nbytes + self.col_indices.nbytes
        return total

    def to_dense(self):
        if self.is_sparse:
            return self._op.toarray()
        return np.array(self._op)

    def to_csr(self):
        if self.is_sparse:
            return self
        return FeatureMatrix.from_scipy(sp.csr_matrix(self._op))

    def row(self, i):
        """Row ``i`` as a dense length-``n`` vector."""
        if not 0 <= i < self.n_rows:
            raise BoundsError(f"row {i} out of range [0, {self.n_rows})")
        if self.is_sparse:
            out = np.zeros(self.n_cols)
            s, e = self.row_offsets[i], self.row_offsets[i + 1]
            out[self.col_indices[s:e]] = self.values[s:e]
            return out
        return np.array(self._op[i])

    def row_block(self, start, stop):
        """Rows ``start:stop`` as a matrix sharing this matrix's buffers."""
        if self.is_sparse:
            s, e = int(self.row_offsets[start]), int(self.row_offsets[stop])
            return FeatureMatrix.csr(self.row_offsets[start:stop + 1] - s,
                                     self.col_indices[s:e], self.values[s:e],
                                     self.n_cols)
        return FeatureMatrix(Layout.DENSE, stop - start, self.n_cols,
                             self._op[start:stop])

    def row_blocks(self, parts):
        """Contiguous near-equal row blocks, cached per partition count."""
        if parts not in self._blocks:
            self._blocks[parts] = [
                (start, self.row_block(start, stop))
                for start, stop in row_ranges(self.n_rows, parts)]
        return self._blocks[parts]

    def __repr__(self):
        return (f"FeatureMatrix(layout={self.layout.value}, "
                f"shape={self.shape}, nnz={self.nnz})")


def _check_csr(n_rows, n_cols, row_offsets, col_indices, values):
    if row_offsets.shape != (n_rows + 1,):
        raise DimensionError("row_offsets must have length n_rows + 1")
    nnz = len(values)
    if len(col_indices) != nnz:
        raise DimensionError("col_indices and values lengths differ")
    if row_offsets[0] != 0 or row_offsets[-1] != nnz:
        raise ValueError("row_offsets must start at 0 and end at nnz")
    if np.any(np.diff(row_offsets) < 0):
        raise ValueError("row_offsets must be nondecreasing")
    if nnz and (col_indices.min() < 0 or col_indices.max() >= n_cols):
        raise BoundsError(f"column index outside [0, {n_cols})")
    if nnz > 1:
        bad = np.diff(col_indices) <= 0
        # a drop in column index is fine where a new row begins
        boundaries = row_offsets[1:-1] - 1
        boundaries = boundaries[(boundaries >= 0) & (boundaries < nnz - 1)]
        bad[boundaries] = False
        if bad.any():
            raise ValueError(
                "column indices must be strictly ascending within each row")


def row_ranges(n, parts):
    """Split ``range(n)`` into ``parts`` contiguous ranges (first ones larger)."""
    parts = max(1, min(parts, n)) if n else 1
    base, extra = divmod(n, parts)
    out, start = [], 0
    for k in range(parts):
        stop = start + base + (1 if k < extra else 0)
        out.append((start, stop))
        start = stop
    return out


def pairwise_sum(parts):
    """Sum a sequence with a fixed-shape binary tree (deterministic order)."""
    parts = list(parts)
    if not parts:
        raise ValueError("nothing to sum")
    while len(parts) > 1:
        paired = [parts[k] + parts[k + 1] for k in range(0, len(parts) - 1, 2)]
        if len(parts) % 2:
            paired.append(parts[-1])
        parts = paired
    return parts[0]


class WorkerPool:
    """Fixed-size thread pool; ``map`` preserves input order."""

    def __init__(self, workers):
        if workers < 1:
            raise ValueError("workers must be >= 1")
        self.workers = int(workers)
        self._executor = None

    def map(self, fn, items):
        items = list(items)
        if self.workers == 1 or len(items) < 2:
            return [fn(it) for it in items]
        if self._executor is None:
            self._executor = ThreadPoolExecutor(
                self.workers, thread_name_prefix="tron-worker")
        return list(self._executor.map(fn, items))

    def close(self):
        if self._executor is not None:
            self._executor.shutdown()
            self._executor = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def as_vector(a, length, name):
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 1 or a.shape[0] != length:
        raise DimensionError(
            f"length mismatch: {name} has shape {a.shape}, expected ({length},)")
    return a


def _split(pool, X):
    if pool is None or pool.workers == 1 or X.n_rows < 2:
        return None
    return X.row_blocks(pool.workers)


def as_index_set(indices, n_rows):
    """Validate an index set: strictly ascending rows inside ``[0, n_rows)``."""
    idx = np.asarray(indices, dtype=np.intp).reshape(-1)
    if idx.size:
        if idx.min() < 0 or idx.max() >= n_rows:
            raise BoundsError(f"row index outside [0, {n_rows})")
        if np.any(np.diff(idx) <= 0):
            raise ValueError("index set must be strictly ascending")
    return idx


def matvec(X, v, pool=None):
    """``X @ v``; rows are independent so blocks are simply concatenated."""
    v = as_vector(v, X.n_cols, "v")
    blocks = _split(pool, X)
    if blocks is None:
        return np.asarray(X._op @ v, dtype=np.float64)
    parts = pool.map(lambda sb: sb[1]._op @ v, blocks)
    return np.concatenate(parts)


def matvec_transpose(X, u, pool=None):
    """``X.T @ u``, reduced across row blocks with :func:`pairwise_sum`."""
    u = as_vector(u, X.n_rows, "u")
    if X.n_rows == 0:
        return np.zeros(X.n_cols)
    blocks = _split(pool, X)
    if blocks is None:
        return np.asarray(X._op.T @ u, dtype=np.float64)
    parts = pool.map(
        lambda sb: sb[1]._op.T @ u[sb[0]:sb[0] + sb[1].n_rows], blocks)
    return pairwise_sum(parts)


def gather_rows(X, indices):
    """Materialize ``X[indices, :]`` in the same layout as ``X``."""
    idx = as_index_set(indices, X.n_rows)
    if not X.is_sparse:
        return FeatureMatrix.dense(X._op[idx])
    starts = X.row_offsets[idx]
    lens = X.row_offsets[idx + 1] - starts
    offsets = np.zeros(len(idx) + 1, dtype=np.int64)
    np.cumsum(lens, out=offsets[1:])
    pos = np.repeat(starts - offsets[:-1], lens) + np.arange(offsets[-1])
    return FeatureMatrix.csr(offsets, X.col_indices[pos], X.values[pos],
                             X.n_cols)


def gathered_nbytes(X, indices):
    """Bytes :func:`gather_rows` would allocate for ``indices``, without gathering."""
    idx = np.asarray(indices, dtype=np.intp)
    if not X.is_sparse:
        return len(idx) * X.n_cols * 8
    nnz = int(np.sum(X.row_offsets[idx + 1] - X.row_offsets[idx]))
    return nnz * 16 + (len(idx) + 1) * 8


def _chunks(idx):
    for s in range(0, len(idx), CHUNK_ROWS):
        yield idx[s:s + CHUNK_ROWS]


def _index_pieces(pool, idx):
    if pool is None or pool.workers == 1 or len(idx) < 2:
        return [idx]
    return [idx[s:e] for s, e in row_ranges(len(idx), pool.workers)]


def _masked_reduce(pool, X, idx, piece_fn):
    pieces = _index_pieces(pool, idx)
    if len(pieces) == 1:
        return piece_fn(pieces[0])
    return pairwise_sum(pool.map(piece_fn, pieces))


def masked_matvec_transpose(X, indices, u, pool=None):
    """``sum_{i in I} u_i x_i`` traversing rows through the index set.

    Never materializes ``X[I, :]``; at most ``CHUNK_ROWS`` rows are copied at
    a time.
    """
    idx = as_index_set(indices, X.n_rows)
    u = as_vector(u, X.n_rows, "u")

    def piece(p):
        acc = np.zeros(X.n_cols)
        for c in _chunks(p):
            acc += gather_rows(X, c)._op.T @ u[c]
        return acc

    return _masked_reduce(pool, X, idx, piece)


def masked_gram_matvec(X, indices, v, pool=None):
    """``X_I.T @ (X_I @ v)`` by chunked traversal of the index set."""
    idx = as_index_set(indices, X.n_rows)
    v = as_vector(v, X.n_cols, "v")

    def piece(p):
        acc = np.zeros(X.n_cols)
        for c in _chunks(p):
            sub = gather_rows(X, c)._op
            acc += sub.T @ (sub @ v)
        return acc

    return _masked_reduce(pool, X, idx, piece)


def gram_matvec(X, v, weights=None, pool=None):
    """``X.T @ (weights * (X @ v))``; ``weights=None`` means all ones."""
    v = as_vector(v, X.n_cols, "v")
    if weights is not None:
        weights = as_vector(weights, X.n_rows, "weights")
    if X.n_rows == 0:
        return np.zeros(X.n_cols)

    def block(sb):
        start, b = sb
        a = b._op @ v
        if weights is not None:
            a = weights[start:start + b.n_rows] * a
        return b._op.T @ a

    blocks = _split(pool, X)
    if blocks is None:
        return np.asarray(block((0, X)), dtype=np.float64)
    return pairwise_sum(pool.map(block, blocks))


def weighted_column_sq_sums(X, weights):
    """``sum_i weights_i * X_ij**2`` for every column ``j``."""
    weights = as_vector(weights, X.n_rows, "weights")
    if X.is_sparse:
        lens = np.diff(X.row_offsets)
        w = np.repeat(weights, lens) * X.values ** 2
        return np.bincount(X.col_indices, weights=w, minlength=X.n_cols)
    return weights @ (X._op ** 2)


def dot(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = as_vector(b, a.shape[0], "b")
    return float(a @ b)


def axpy(alpha, a, b):
    """``alpha * a + b`` as a new vector."""
    a = np.asarray(a, dtype=np.float64)
    b = as_vector(b, a.shape[0], "b")
    return alpha * a + b


def norm2(a):
    return float(np.linalg.norm(np.asarray(a, dtype=np.float64)))
