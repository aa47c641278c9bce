"""Execution plans: where the loss computations run and what crosses domains.

Four backends share the same numerical kernels:

``seq``
    Everything on the calling thread.
``par``
    Instances partitioned across a worker pool, deterministic tree reductions.
``staged``
    A modeled accelerator.  Margin passes, objective reductions, gradients and
    Hessian products run on a dedicated single-thread *staging domain*; the
    coordinating flow (the TRON loop) only receives a scalar objective per
    candidate and the length-``n`` gradient after an accepted step.  SVM
    Hessian products use the gathered submatrix ``X[I, :]``.
``mix``
    Staging domain for the margin pass, then ``z`` and the active set are
    handed to the coordinating flow, which answers SVM gradients and Hessian
    products with a worker pool through the index set, never gathering
    ``X[I, :]``.  Logistic regression follows the staged schedule with the
    staging kernels split across the workers.

Every cross-domain movement is counted in a :class:`TransferLedger` and
appended to the plan's ``schedule`` so ordering rules can be checked.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from enum import Enum
from typing import NamedTuple

import numpy as np

from . import linalg, losses
from .losses import GATHERED, INDIRECT, Loss, SvmStrategy

__all__ = [
    "Backend",
    "BudgetExceeded",
    "DEFAULT_BUDGET_BYTES",
    "ExecutionPlan",
    "StageEvent",
    "TransferLedger",
    "check_schedule",
    "execute_lr_iteration",
    "execute_svm_iteration",
    "format_report",
    "ledger_report",
]

DEFAULT_BUDGET_BYTES = 2 * 1024 ** 3


class Backend(str, Enum):
    SEQUENTIAL = "seq"
    PARALLEL = "par"
    STAGED = "staged"
    MIXED = "mix"


class BudgetExceeded(MemoryError):
    def __init__(self, needed, budget):
        self.needed = needed
        self.budget = budget
        super().__init__(
            f"gathering X[I, :] needs {needed} bytes, over the {budget}-byte "
            "budget; use the MixedActiveSet backend (--backend mix), which "
            "walks the active set without materializing the submatrix")


@dataclass
class TransferLedger:
    """Counters for buffer movement between the staging and coordinating domains.

    ``bulk_handoffs`` counts length-``l``, length-``|I|`` or gradient buffers;
    ``vector_returns`` counts the length-``n`` Hessian products and
    preconditioner diagonals handed back inside the CG loop.  The two byte
    fields are peaks over the solve.
    """

    bulk_handoffs: int = 0
    scalar_returns: int = 0
    vector_returns: int = 0
    gradient_materializations: int = 0
    gathered_submatrix_bytes: int = 0
    index_set_bytes: int = 0

    def snapshot(self):
        return asdict(self)

    def delta(self, before):
        return {k: v - before[k] for k, v in self.snapshot().items()}


class StageEvent(NamedTuple):
    seq: int
    iteration: int
    stage: str
    kind: str  # "compute", "scalar", "vector" or "bulk"


def _submit(executor, fn, *args):
    if executor is None:
        return fn(*args)
    return executor.submit(fn, *args).result()


class ExecutionPlan:
    """Backend selection plus its ledger, schedule log and worker pools.

    Parameters
    ----------
    backend : Backend or str
    workers : int
        Worker count for ``par`` and ``mix``.
    svm_strategy : SvmStrategy, optional
        Fixed by the backend for ``staged`` (gathered) and ``mix``
        (indirect); free for ``seq``/``par`` where it defaults to indirect.
    budget_bytes : int
        Ceiling for a gathered ``X[I, :]``.
    """

    def __init__(self, backend=Backend.SEQUENTIAL, workers=1,
                 svm_strategy=None, budget_bytes=DEFAULT_BUDGET_BYTES):
        self.backend = Backend(backend)
        if workers < 1:
            raise ValueError("workers must be >= 1")
        if self.backend is Backend.SEQUENTIAL and workers != 1:
            raise ValueError("the sequential backend runs with one worker")
        forced = {Backend.STAGED: GATHERED, Backend.MIXED: INDIRECT}.get(
            self.backend)
        if svm_strategy is not None:
            svm_strategy = SvmStrategy(svm_strategy)
            if forced is not None and svm_strategy is not forced:
                raise ValueError(
                    f"backend {self.backend.value} implies the "
                    f"{forced.value} SVM strategy")
        self.svm_strategy = svm_strategy or forced or INDIRECT
        self.workers = int(workers)
        self.budget_bytes = int(budget_bytes)
        self.ledger = TransferLedger()
        self.schedule = []
        self.iteration = 0
        self.iterations_seen = 0
        self.pool = linalg.WorkerPool(self.workers) if self.workers > 1 else None
        self._staging = None
        self._gathered = None  # (state, X[I, :]) for the current iterate

    @classmethod
    def sequential(cls, **kw):
        return cls(Backend.SEQUENTIAL, **kw)

    @classmethod
    def parallel(cls, workers, **kw):
        return cls(Backend.PARALLEL, workers, **kw)

    @classmethod
    def staged(cls, **kw):
        return cls(Backend.STAGED, **kw)

    @classmethod
    def mixed(cls, workers=1, **kw):
        return cls(Backend.MIXED, workers, **kw)

    @property
    def has_staging_domain(self):
        return self.backend in (Backend.STAGED, Backend.MIXED)

    def __repr__(self):
        return (f"ExecutionPlan(backend={self.backend.value}, "
                f"workers={self.workers}, svm_strategy={self.svm_strategy.value})")

    # -- bookkeeping ------------------------------------------------------

    def _log(self, stage, kind):
        self.schedule.append(
            StageEvent(len(self.schedule), self.iteration, stage, kind))
        if kind == "scalar":
            self.ledger.scalar_returns += 1
        elif kind == "bulk":
            self.ledger.bulk_handoffs += 1
        elif kind == "vector":
            self.ledger.vector_returns += 1

    def _stage(self, name, fn, *args):
        """Run ``fn`` where this backend keeps loss buffers."""
        if self.has_staging_domain:
            if self._staging is None:
                self._staging = ThreadPoolExecutor(
                    1, thread_name_prefix="tron-staging")
            self._log(name, "compute")
            return _submit(self._staging, fn, *args)
        return fn(*args)

    def _record_index_set(self, active):
        self.ledger.index_set_bytes = max(self.ledger.index_set_bytes,
                                          int(active.nbytes))

    def begin_iteration(self, k):
        self.iteration = k
        self.iterations_seen = max(self.iterations_seen, k)

    def reset(self):
        self.ledger = TransferLedger()
        self.schedule = []
        self.iteration = 0
        self.iterations_seen = 0
        self._gathered = None

    def close(self):
        if self.pool is not None:
            self.pool.close()
        if self._staging is not None:
            self._staging.shutdown()
            self._staging = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    # -- operations used by the solver -------------------------------------

    def evaluate(self, loss, p, w):
        if Loss(loss) is Loss.LR:
            return execute_lr_iteration(self, p, w)[0]
        return execute_svm_iteration(self, p, w)[0]

    def gradient(self, loss, p, state, w):
        """Materialize the gradient at an accepted iterate."""
        self.ledger.gradient_materializations += 1
        if Loss(loss) is Loss.LR:
            g = self._stage("gradient", losses.gradient_lr, p, state, w,
                            self.pool)
            if self.has_staging_domain:
                self._log("gradient", "bulk")
            return g

        if self.svm_strategy is GATHERED:
            xhat = self._stage("gather-active-rows", self._gather, p, state)
            g = self._stage("gradient", _gathered_gradient, p, state, w, xhat,
                            self.pool)
        elif self.backend is Backend.MIXED:
            # z and I already live on the coordinating side
            g = losses.gradient_svm(p, state, w, self.pool)
        else:
            g = self._stage("gradient", losses.gradient_svm, p, state, w,
                            self.pool)
        if self.backend is Backend.STAGED:
            self._log("gradient", "bulk")
        return g

    def _gather(self, p, state):
        needed = linalg.gathered_nbytes(p.X, state.active)
        if needed > self.budget_bytes:
            raise BudgetExceeded(needed, self.budget_bytes)
        xhat = linalg.gather_rows(p.X, state.active)
        self.ledger.gathered_submatrix_bytes = max(
            self.ledger.gathered_submatrix_bytes, xhat.nbytes)
        self._gathered = (state, xhat)
        return xhat

    def hessian_applicator(self, loss, p, state):
        """Return ``v -> H v`` for the loss state of the current iterate."""
        loss = Loss(loss)
        pool = self.pool
        if loss is Loss.LR:
            fn = lambda v: losses.hessian_vec_lr(p, state, v, pool)  # noqa: E731
        elif self.svm_strategy is GATHERED:
            cached = self._gathered
            xhat = cached[1] if cached is not None and cached[0] is state else None
            fn = lambda v: losses.hessian_vec_svm(  # noqa: E731
                p, state, v, GATHERED, xhat, pool)
        else:
            fn = lambda v: losses.hessian_vec_svm(  # noqa: E731
                p, state, v, INDIRECT, None, pool)

        on_host = loss is Loss.SVM and self.backend is Backend.MIXED
        if not self.has_staging_domain or on_host:
            return fn

        def staged(v):
            out = self._stage("hessian-apply", fn, v)
            self._log("hessian-apply", "vector")
            return out

        return staged

    def preconditioner(self, loss, p, state):
        loss = Loss(loss)
        on_host = loss is Loss.SVM and self.backend is Backend.MIXED
        if not self.has_staging_domain or on_host:
            return losses.precond_diag(p, state, loss)
        M = self._stage("preconditioner", losses.precond_diag, p, state, loss)
        self._log("preconditioner", "vector")
        return M


def _gathered_gradient(p, state, w, xhat, pool):
    losses._check_fresh(state, w)
    u = state.z[state.active] - p.y[state.active]
    return state.w + 2.0 * p.C * linalg.matvec_transpose(xhat, u, pool)


def execute_lr_iteration(plan, p, w_candidate):
    """Fused logistic margin pass for one candidate under ``plan``.

    Returns the loss state and the ledger delta.  Staging backends hand only
    the scalar objective to the coordinating flow here; the gradient (one bulk
    handoff) follows from :meth:`ExecutionPlan.gradient` if the step is
    accepted.
    """
    before = plan.ledger.snapshot()
    state = plan._stage("margin-pass", losses.fused_margin_pass_lr, p,
                        w_candidate, plan.pool)
    if plan.has_staging_domain:
        plan._log("objective-reduction", "scalar")
    return state, plan.ledger.delta(before)


def execute_svm_iteration(plan, p, w_candidate):
    """SVM margin pass, active set and objective for one candidate.

    Under the gathered strategy the projected size of ``X[I, :]`` is checked
    against the plan budget right away; the gather itself happens once the
    step is accepted.  Under ``mix`` the margins and the index set are handed
    to the coordinating flow (two bulk handoffs) after the scalar objective.
    """
    before = plan.ledger.snapshot()
    state = plan._stage("margin-pass", losses.fused_margin_pass_svm, p,
                        w_candidate, plan.pool)
    plan._record_index_set(state.active)
    if plan.svm_strategy is GATHERED:
        needed = linalg.gathered_nbytes(p.X, state.active)
        if needed > plan.budget_bytes:
            raise BudgetExceeded(needed, plan.budget_bytes)
    if plan.has_staging_domain:
        plan._log("objective-reduction", "scalar")
    if plan.backend is Backend.MIXED:
        plan._log("margins-to-host", "bulk")
        plan._log("active-set-to-host", "bulk")
    return state, plan.ledger.delta(before)


def check_schedule(plan):
    """Ordering violations in ``plan.schedule`` (empty list when legal).

    Within each outer iteration, the scalar objective of a candidate must
    reach the coordinating flow before any bulk handoff of that iteration.
    """
    problems = []
    seen_scalar = {}
    for ev in plan.schedule:
        if ev.kind == "scalar":
            seen_scalar[ev.iteration] = True
        elif ev.kind == "bulk" and not seen_scalar.get(ev.iteration):
            problems.append(
                f"iteration {ev.iteration}: bulk handoff '{ev.stage}' "
                "before the scalar objective")
    return problems


def ledger_report(plan):
    """All ledger counters plus derived ratios, as a flat dict."""
    report = {"backend": plan.backend.value, "workers": plan.workers,
              "svm_strategy": plan.svm_strategy.value}
    report.update(plan.ledger.snapshot())
    iters = plan.iterations_seen
    report["outer_iterations"] = iters
    report["handoffs_per_iteration"] = (
        plan.ledger.bulk_handoffs / iters if iters else 0.0)
    # storage held for the SVM Hessian between accepted steps
    report["peak_auxiliary_bytes"] = (
        plan.ledger.gathered_submatrix_bytes
        if plan.svm_strategy is GATHERED else plan.ledger.index_set_bytes)
    return report


def format_report(report):
    """``key=value`` lines, one per entry."""
    lines = []
    for key, value in report.items():
        if isinstance(value, float):
            value = repr(value)
        lines.append(f"{key}={value}")
    return "\n".join(lines) + "\n"
