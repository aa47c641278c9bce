"""LIBSVM sparse text format, a dense whitespace format, and dataset statistics."""

from __future__ import annotations

from array import array
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .linalg import FeatureMatrix
from .losses import ProblemInstance

__all__ = [
    "DatasetStats",
    "ParseError",
    "UnsupportedLabelError",
    "dataset_stats",
    "load_dense",
    "parse_libsvm",
    "read_libsvm",
    "synthetic_problem",
    "write_libsvm",
]


class ParseError(ValueError):
    def __init__(self, line_no, message):
        self.line_no = line_no
        super().__init__(f"line {line_no}: {message}")


class UnsupportedLabelError(ParseError):
    pass


def _label(token, line_no):
    try:
        value = float(token)
    except ValueError:
        raise ParseError(line_no, f"non-numeric label {token!r}") from None
    if value == 1.0:
        return 1.0
    if value in (-1.0, 0.0):
        return -1.0
    raise UnsupportedLabelError(
        line_no, f"unsupported label {token!r} (expected -1, 0 or +1)")


def _lines(stream):
    for line_no, line in enumerate(stream, start=1):
        if isinstance(line, bytes):
            line = line.decode()
        line = line.strip()
        if line:
            yield line_no, line


def parse_libsvm(stream, C=1.0, n_features=None):
    """Read ``label idx:val ...`` lines into a CSR :class:`ProblemInstance`.

    Indices are 1-based and strictly ascending in the file and 0-based in
    the result.  The feature count is the largest index seen unless
    ``n_features`` is given, in which case larger indices are an error.
    Lines are consumed one at a time.
    """
    labels = array("d")
    offsets = array("q", [0])
    cols = array("q")
    vals = array("d")
    max_index = 0
    for line_no, line in _lines(stream):
        tokens = line.split()
        labels.append(_label(tokens[0], line_no))
        prev = 0
        for tok in tokens[1:]:
            idx_s, sep, val_s = tok.partition(":")
            if not sep:
                raise ParseError(line_no, f"expected index:value, got {tok!r}")
            try:
                idx = int(idx_s)
                val = float(val_s)
            except ValueError:
                raise ParseError(line_no, f"non-numeric token {tok!r}") from None
            if idx < 1:
                raise ParseError(line_no, f"feature index {idx} is not >= 1")
            if idx <= prev:
                raise ParseError(
                    line_no, f"feature index {idx} is not ascending "
                    f"(follows {prev})")
            if n_features is not None and idx > n_features:
                raise ParseError(
                    line_no, f"feature index {idx} exceeds n = {n_features}")
            prev = idx
            cols.append(idx - 1)
            vals.append(val)
        max_index = max(max_index, prev)
        offsets.append(len(cols))
    n = max_index if n_features is None else n_features
    X = FeatureMatrix.csr(np.frombuffer(offsets, dtype=np.int64),
                          np.frombuffer(cols, dtype=np.int64),
                          np.frombuffer(vals, dtype=np.float64), n)
    return ProblemInstance(X, np.frombuffer(labels, dtype=np.float64), C)


def read_libsvm(path, C=1.0, n_features=None):
    with open(path) as fh:
        return parse_libsvm(fh, C, n_features)


def _fmt(value):
    text = repr(float(value))
    return text[:-2] if text.endswith(".0") else text


def write_libsvm(p, stream):
    """Write ``p`` in LIBSVM format; values use shortest round-trip decimals."""
    X = p.X.to_csr()
    for i in range(X.n_rows):
        s, e = X.row_offsets[i], X.row_offsets[i + 1]
        parts = ["+1" if p.y[i] > 0 else "-1"]
        parts.extend(f"{j + 1}:{_fmt(v)}"
                     for j, v in zip(X.col_indices[s:e], X.values[s:e]))
        stream.write(" ".join(parts) + "\n")


def load_dense(stream, n, C=1.0):
    """Read ``label v1 ... vn`` lines into a dense :class:`ProblemInstance`."""
    labels, rows = [], []
    for line_no, line in _lines(stream):
        tokens = line.split()
        if len(tokens) != n + 1:
            raise ParseError(
                line_no, f"expected a label and {n} values, got "
                f"{len(tokens) - 1} values")
        labels.append(_label(tokens[0], line_no))
        try:
            rows.append([float(t) for t in tokens[1:]])
        except ValueError:
            raise ParseError(line_no, "non-numeric value") from None
    values = np.array(rows, dtype=np.float64).reshape(len(rows), n)
    return ProblemInstance(FeatureMatrix.dense(values), np.array(labels), C)


@dataclass(frozen=True)
class DatasetStats:
    instances: int
    features: int
    nonzeros: int
    label_counts: dict = field(default_factory=dict)


def dataset_stats(p):
    counts = Counter(int(v) for v in p.y)
    return DatasetStats(p.n_instances, p.n_features, p.X.nnz,
                        dict(sorted(counts.items())))


def synthetic_problem(l, n, C=1.0, seed=0, density=None, noise=0.5):
    """Random linearly generated labels with Gaussian features.

    Dense by default; with ``density`` the matrix is CSR with roughly that
    fraction of stored entries.
    """
    rng = np.random.default_rng(seed)
    w_true = rng.standard_normal(n)
    if density is None:
        values = rng.standard_normal((l, n))
        X = FeatureMatrix.dense(values)
        score = values @ w_true
    else:
        import scipy.sparse as sp

        m = sp.random(l, n, density=density, format="csr", random_state=rng,
                      data_rvs=rng.standard_normal)
        X = FeatureMatrix.from_scipy(m)
        score = m @ w_true
    score = score + noise * rng.standard_normal(l)
    y = np.where(score >= 0, 1.0, -1.0)
    return ProblemInstance(X, y, C)
