"""Objective, gradient and Hessian-vector products for L2-regularized
logistic regression and the squared-hinge (L2) SVM.

Both objectives share the form ``0.5 * w.w + C * sum_i loss(y_i * x_i.w)``.
The per-instance work is done by a fused margin pass that produces every
quantity later needed by the gradient and Hessian in one traversal of the
instances; the resulting state object is an immutable snapshot tied to the
``w`` that produced it.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import linalg
from .linalg import FeatureMatrix

__all__ = [
    "GATHERED",
    "INDIRECT",
    "Loss",
    "LogisticLossState",
    "ProblemInstance",
    "StaleStateError",
    "StrategyError",
    "SvmLossState",
    "SvmStrategy",
    "fused_margin_pass",
    "fused_margin_pass_lr",
    "fused_margin_pass_svm",
    "gradient",
    "gradient_lr",
    "gradient_svm",
    "hessian_vec_lr",
    "hessian_vec_svm",
    "objective_lr",
    "objective_svm",
    "precond_diag",
]


class Loss(str, Enum):
    LR = "lr"
    SVM = "l2svm"


class SvmStrategy(str, Enum):
    """How the SVM generalized Hessian reaches the active rows."""

    GATHERED = "gathered"  # materialize X[I, :] once per accepted step
    INDIRECT = "indirect"  # traverse rows through the index set


GATHERED = SvmStrategy.GATHERED
INDIRECT = SvmStrategy.INDIRECT


class StaleStateError(ValueError):
    """A loss state was used with a ``w`` other than the one it was built from."""


class StrategyError(ValueError):
    """A Hessian strategy was requested without its precondition."""


@dataclass(frozen=True, eq=False)
class ProblemInstance:
    """Features ``X``, labels ``y`` in {-1, +1} and regularization weight ``C``."""

    X: FeatureMatrix
    y: np.ndarray
    C: float = 1.0

    def __post_init__(self):
        y = np.asarray(self.y, dtype=np.float64).reshape(-1)
        if y.shape[0] != self.X.n_rows:
            raise linalg.DimensionError(
                f"length mismatch: {y.shape[0]} labels for {self.X.n_rows} rows")
        if not np.all((y == 1.0) | (y == -1.0)):
            raise ValueError("labels must be -1 or +1")
        if not (np.isfinite(self.C) and self.C > 0):
            raise ValueError(f"C must be positive and finite, got {self.C}")
        y = y.copy()
        y.flags.writeable = False
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "C", float(self.C))

    @property
    def n_instances(self):
        return self.X.n_rows

    @property
    def n_features(self):
        return self.X.n_cols


@dataclass(frozen=True, eq=False)
class LogisticLossState:
    w: np.ndarray
    z: np.ndarray
    zhat: np.ndarray
    dvec: np.ndarray
    alpha: np.ndarray
    f: float


@dataclass(frozen=True, eq=False)
class SvmLossState:
    w: np.ndarray
    z: np.ndarray
    active: np.ndarray
    f: float


def _snapshot(w):
    w = np.array(w, dtype=np.float64)
    w.flags.writeable = False
    return w


def _check_fresh(state, w):
    if state.w.shape != np.shape(w) or not np.array_equal(state.w, w):
        raise StaleStateError(
            "loss state was computed for a different w; rerun the margin pass")


def _logistic_terms(t):
    """Return ``h(t)``, ``1 - h(t)`` and ``log(1 + exp(-t))`` without overflow."""
    e = np.exp(-np.abs(t))
    inv = 1.0 / (1.0 + e)
    pos = t >= 0
    h = np.where(pos, inv, e * inv)
    h_c = np.where(pos, e * inv, inv)
    alpha = np.maximum(-t, 0.0) + np.log1p(e)
    return h, h_c, alpha


def _lr_block(Xb, yb, w):
    z = np.asarray(Xb._op @ w, dtype=np.float64)
    h, h_c, alpha = _logistic_terms(yb * z)
    return z, -h_c * yb, h * h_c, alpha, np.sum(alpha)


def fused_margin_pass_lr(p, w, pool=None):
    """Compute ``z = Xw`` and, in the same traversal, ``zhat``, ``D``, ``alpha``
    and the objective.

    Parameters
    ----------
    p : ProblemInstance
    w : array_like, shape (n,)
    pool : WorkerPool, optional
        Rows are split into one contiguous block per worker; the loss sum is
        reduced across blocks with a pairwise tree.

    Returns
    -------
    LogisticLossState
    """
    w = _snapshot(linalg.as_vector(w, p.n_features, "w"))
    y = p.y
    if pool is None or pool.workers == 1 or p.n_instances < 2:
        z, zhat, dvec, alpha, loss = _lr_block(p.X, y, w)
    else:
        parts = pool.map(
            lambda sb: _lr_block(sb[1], y[sb[0]:sb[0] + sb[1].n_rows], w),
            p.X.row_blocks(pool.workers))
        z, zhat, dvec, alpha = (np.concatenate([q[k] for q in parts])
                                for k in range(4))
        loss = linalg.pairwise_sum([q[4] for q in parts])
    f = 0.5 * float(w @ w) + p.C * float(loss)
    return LogisticLossState(w, z, zhat, dvec, alpha, f)


def objective_lr(p, w):
    """``0.5 w.w + C sum log(1 + exp(-y_i x_i.w))``, evaluated directly."""
    w = linalg.as_vector(w, p.n_features, "w")
    t = p.y * linalg.matvec(p.X, w)
    return 0.5 * float(w @ w) + p.C * float(np.sum(np.logaddexp(0.0, -t)))


def gradient_lr(p, state, w, pool=None):
    _check_fresh(state, w)
    return state.w + p.C * linalg.matvec_transpose(p.X, state.zhat, pool)


def hessian_vec_lr(p, state, v, pool=None):
    """``v + C X^T (D (X v))``."""
    v = linalg.as_vector(v, p.n_features, "v")
    return v + p.C * linalg.gram_matvec(p.X, v, state.dvec, pool)


def _svm_block(Xb, yb, w, start):
    z = np.asarray(Xb._op @ w, dtype=np.float64)
    margin = 1.0 - yb * z
    local = np.flatnonzero(margin > 0)
    return z, local + start, np.sum(margin[local] ** 2)


def fused_margin_pass_svm(p, w, pool=None):
    """``z = Xw``, the strict active set ``{i : 1 - y_i z_i > 0}`` and the objective."""
    w = _snapshot(linalg.as_vector(w, p.n_features, "w"))
    y = p.y
    if pool is None or pool.workers == 1 or p.n_instances < 2:
        z, active, loss = _svm_block(p.X, y, w, 0)
    else:
        parts = pool.map(
            lambda sb: _svm_block(sb[1], y[sb[0]:sb[0] + sb[1].n_rows], w,
                                  sb[0]),
            p.X.row_blocks(pool.workers))
        z = np.concatenate([q[0] for q in parts])
        active = np.concatenate([q[1] for q in parts])
        loss = linalg.pairwise_sum([q[2] for q in parts])
    active = active.astype(np.intp)
    active.flags.writeable = False
    f = 0.5 * float(w @ w) + p.C * float(loss)
    return SvmLossState(w, z, active, f)


def objective_svm(p, w):
    w = linalg.as_vector(w, p.n_features, "w")
    slack = np.maximum(0.0, 1.0 - p.y * linalg.matvec(p.X, w))
    return 0.5 * float(w @ w) + p.C * float(np.sum(slack ** 2))


def gradient_svm(p, state, w, pool=None):
    """``w + 2C X_I^T (z_I - y_I)``."""
    _check_fresh(state, w)
    u = state.z - p.y
    return state.w + 2.0 * p.C * linalg.masked_matvec_transpose(
        p.X, state.active, u, pool)


def hessian_vec_svm(p, state, v, strategy=INDIRECT, gathered=None, pool=None):
    """Generalized Hessian product ``v + 2C sum_{i in I} (x_i.v) x_i``.

    ``GATHERED`` multiplies through ``gathered`` (the materialized
    ``X[I, :]``); ``INDIRECT`` walks the rows named by the active set.
    """
    strategy = SvmStrategy(strategy)
    v = linalg.as_vector(v, p.n_features, "v")
    if strategy is GATHERED:
        if gathered is None or gathered.n_rows != len(state.active):
            raise StrategyError(
                "gathered strategy needs the X[I, :] submatrix of this state")
        return v + 2.0 * p.C * linalg.gram_matvec(gathered, v, pool=pool)
    return v + 2.0 * p.C * linalg.masked_gram_matvec(p.X, state.active, v, pool)


def precond_diag(p, state, loss):
    """Diagonal of the Hessian: ``1 + C s sum_i d_i X_ij^2`` (always >= 1)."""
    loss = Loss(loss)
    if loss is Loss.LR:
        weights, scale = state.dvec, 1.0
    else:
        weights = np.zeros(p.n_instances)
        weights[state.active] = 1.0
        scale = 2.0
    return 1.0 + p.C * scale * linalg.weighted_column_sq_sums(p.X, weights)


def fused_margin_pass(loss, p, w, pool=None):
    if Loss(loss) is Loss.LR:
        return fused_margin_pass_lr(p, w, pool)
    return fused_margin_pass_svm(p, w, pool)


def gradient(loss, p, state, w, pool=None):
    if Loss(loss) is Loss.LR:
        return gradient_lr(p, state, w, pool)
    return gradient_svm(p, state, w, pool)
