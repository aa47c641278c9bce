"""Trust-region Newton (TRON) outer loop and the truncated CG subproblem solver.

The solver only talks to the problem through an execution plan
(:class:`tronlinear.backends.ExecutionPlan`), so the same loop runs on every
backend.  The gradient is materialized only at the starting point and after
accepted steps; a rejected candidate costs one objective evaluation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .losses import Loss

__all__ = [
    "CgExit",
    "IterationRecord",
    "NumericalFailure",
    "SolveResult",
    "SolverTrace",
    "TrustRegionConfig",
    "quadratic_model",
    "solve",
    "truncated_cg",
    "trust_region_update",
]


class NumericalFailure(RuntimeError):
    """Non-finite values or broken curvature; ``trace`` holds progress so far."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


class CgExit(str, Enum):
    CONVERGED = "converged"
    BOUNDARY = "boundary"
    MAX_ITERS = "max-iters"


@dataclass(frozen=True)
class TrustRegionConfig:
    eps: float = 0.1
    max_outer_iters: int = 1000
    max_cg_iters: int | None = None  # None: min(n, 1000)
    sigma0: float = 1e-4
    eta1: float = 0.25
    eta2: float = 0.75
    gamma1: float = 0.25
    gamma2: float = 0.5
    gamma3: float = 4.0
    cg_tol: float = 0.1
    use_preconditioner: bool = False

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if self.max_outer_iters < 0:
            raise ValueError("max_outer_iters must be >= 0")
        if self.max_cg_iters is not None and self.max_cg_iters < 1:
            raise ValueError("max_cg_iters must be >= 1")
        if not 0 < self.sigma0 < 1:
            raise ValueError("sigma0 must lie in (0, 1)")
        if not 0 < self.eta1 < self.eta2 < 1:
            raise ValueError("need 0 < eta1 < eta2 < 1")
        if not 0 < self.gamma1 < self.gamma2 < 1 < self.gamma3:
            raise ValueError("need 0 < gamma1 < gamma2 < 1 < gamma3")
        if not 0 < self.cg_tol < 1:
            raise ValueError("cg_tol must lie in (0, 1)")

    def cg_limit(self, n):
        if self.max_cg_iters is not None:
            return self.max_cg_iters
        return max(1, min(n, 1000))


@dataclass(frozen=True)
class IterationRecord:
    iteration: int
    f: float  # objective at the iterate kept after this iteration
    f_candidate: float
    gnorm: float  # gradient norm the CG subproblem was built from
    delta: float  # radius used for this iteration's subproblem
    sigma: float
    accepted: bool
    cg_iters: int
    cg_exit: CgExit
    step_norm: float


@dataclass
class SolverTrace:
    f0: float = math.nan
    gnorm0: float = math.nan
    records: list = field(default_factory=list)
    accepted_steps: int = 0
    gradient_evaluations: int = 0
    objective_evaluations: int = 0

    @property
    def outer_iterations(self):
        return len(self.records)

    def accepted_objectives(self):
        return [self.f0] + [r.f for r in self.records if r.accepted]


@dataclass
class SolveResult:
    w: np.ndarray
    f: float
    gnorm: float
    converged: bool
    trace: SolverTrace


def quadratic_model(g, hv, d):
    """``g.d + 0.5 d.(H d)`` with ``hv`` applying ``H``."""
    g = np.asarray(g, dtype=np.float64)
    d = np.asarray(d, dtype=np.float64)
    if g.shape != d.shape:
        raise ValueError("g and d lengths differ")
    if not d.any():
        return 0.0
    return float(g @ d + 0.5 * (d @ hv(d)))


def _boundary_step(d, p, delta):
    # positive root tau of ||d + tau p|| = delta, given ||d|| <= delta
    a = p @ p
    b = 2.0 * (d @ p)
    c = d @ d - delta * delta
    disc = math.sqrt(max(b * b - 4.0 * a * c, 0.0))
    if b >= 0:
        return (-2.0 * c) / (b + disc) if b + disc > 0 else 0.0
    return (-b + disc) / (2.0 * a)


def truncated_cg(g, hv, delta, M=None, cfg=None):
    """Approximately minimize ``q(d)`` subject to ``||d|| <= delta``.

    Conjugate gradients on ``H d = -g`` from ``d = 0``, optionally with the
    diagonal preconditioner ``M``.  Stops when ``||r|| <= cfg.cg_tol * ||g||``,
    when an iterate would leave the ball (the step is then cut at the
    boundary along the last direction), or after ``cfg.cg_limit(n)``
    iterations.

    Returns
    -------
    d : ndarray
    exit : CgExit
    iters : int
    residual : ndarray
        ``-g - H d`` at the returned ``d``; gives ``q(d) = 0.5 (g.d - d.r)``
        without another Hessian product.
    """
    cfg = cfg or TrustRegionConfig()
    if not delta > 0:
        raise ValueError("trust-region radius must be positive")
    g = np.asarray(g, dtype=np.float64)
    n = g.shape[0]
    d = np.zeros(n)
    r = -g
    tol = cfg.cg_tol * np.linalg.norm(g)
    if np.linalg.norm(r) <= tol:
        return d, CgExit.CONVERGED, 0, r
    inv_m = None if M is None else 1.0 / np.asarray(M, dtype=np.float64)
    s = r if inv_m is None else inv_m * r
    p = s.copy()
    rs = r @ s
    limit = cfg.cg_limit(n)
    for it in range(1, limit + 1):
        hp = hv(p)
        curv = p @ hp
        if not (np.isfinite(curv) and curv > 0):
            raise NumericalFailure(
                f"non-positive curvature {curv!r} in conjugate gradient")
        alpha = rs / curv
        d_next = d + alpha * p
        if np.linalg.norm(d_next) > delta:
            tau = _boundary_step(d, p, delta)
            d = d + tau * p
            dn = np.linalg.norm(d)
            if dn > delta:
                d *= delta / dn
            r = r - tau * hp
            return d, CgExit.BOUNDARY, it, r
        d = d_next
        r = r - alpha * hp
        if np.linalg.norm(r) <= tol:
            return d, CgExit.CONVERGED, it, r
        s = r if inv_m is None else inv_m * r
        rs_next = r @ s
        p = s + (rs_next / rs) * p
        rs = rs_next
    return d, CgExit.MAX_ITERS, limit, r


def trust_region_update(sigma, delta, dnorm, cfg=None):
    """Acceptance decision and next radius from the reduction ratio ``sigma``.

    ======================  ========  =========================
    ratio                   accept    new radius
    ======================  ========  =========================
    sigma <= sigma0         no        gamma1 * dnorm
    sigma0 < sigma < eta1   yes       gamma2 * dnorm
    eta1 <= sigma < eta2    yes       delta
    sigma >= eta2           yes       max(delta, gamma3 * dnorm)
    ======================  ========  =========================
    """
    cfg = cfg or TrustRegionConfig()
    if not delta > 0:
        raise ValueError("trust-region radius must be positive")
    if not 0 < dnorm <= delta * (1 + 1e-12):
        raise ValueError(f"step norm {dnorm!r} outside (0, delta]")
    if not sigma > cfg.sigma0:
        return False, cfg.gamma1 * dnorm
    if sigma < cfg.eta1:
        return True, cfg.gamma2 * dnorm
    if sigma < cfg.eta2:
        return True, delta
    return True, max(delta, cfg.gamma3 * dnorm)


def _finite(x):
    return bool(np.all(np.isfinite(x)))


def solve(p, loss, cfg=None, plan=None, w0=None):
    """Minimize the regularized loss for ``p`` with TRON.

    Parameters
    ----------
    p : ProblemInstance
    loss : Loss or {"lr", "l2svm"}
    cfg : TrustRegionConfig, optional
    plan : ExecutionPlan, optional
        Defaults to a fresh sequential plan.
    w0 : array_like, optional
        Starting point; zeros by default.

    Returns
    -------
    SolveResult
        ``converged`` is true when ``||grad f(w)|| <= eps * ||grad f(w0)||``.
    """
    from .backends import ExecutionPlan

    loss = Loss(loss)
    cfg = cfg or TrustRegionConfig()
    plan = plan if plan is not None else ExecutionPlan()
    if p.n_instances == 0:
        raise ValueError("cannot train on an empty problem (no instances)")
    n = p.n_features
    w = np.zeros(n) if w0 is None else np.array(w0, dtype=np.float64)
    if w.shape != (n,):
        raise ValueError(f"w0 must have length {n}")

    trace = SolverTrace()
    plan.begin_iteration(0)
    state = plan.evaluate(loss, p, w)
    trace.objective_evaluations += 1
    f = state.f
    if not math.isfinite(f):
        raise NumericalFailure("objective is not finite at the start point",
                               trace)
    g = plan.gradient(loss, p, state, w)
    trace.gradient_evaluations += 1
    gnorm = float(np.linalg.norm(g))
    if not _finite(g):
        raise NumericalFailure("gradient is not finite at the start point",
                               trace)
    trace.f0, trace.gnorm0 = f, gnorm
    stop = cfg.eps * gnorm
    delta = gnorm
    converged = gnorm <= stop

    it = 0
    while not converged and it < cfg.max_outer_iters:
        it += 1
        plan.begin_iteration(it)
        hv = plan.hessian_applicator(loss, p, state)
        M = plan.preconditioner(loss, p, state) if cfg.use_preconditioner else None
        d, exit_reason, cg_iters, r = truncated_cg(g, hv, delta, M, cfg)
        q = 0.5 * float(g @ d - d @ r)
        if not (math.isfinite(q) and q < 0):
            raise NumericalFailure(
                f"quadratic model did not decrease (q = {q!r})", trace)
        dnorm = float(np.linalg.norm(d))
        w_new = w + d
        cand = plan.evaluate(loss, p, w_new)
        trace.objective_evaluations += 1
        f_new = cand.f
        if not math.isfinite(f_new):
            raise NumericalFailure("objective is not finite at a candidate",
                                   trace)
        sigma = (f_new - f) / q
        used_delta = delta
        accepted, delta = trust_region_update(sigma, delta, dnorm, cfg)
        gnorm_used = gnorm
        if accepted:
            w, state, f = w_new, cand, f_new
            g = plan.gradient(loss, p, state, w)
            trace.gradient_evaluations += 1
            trace.accepted_steps += 1
            if not _finite(g):
                raise NumericalFailure("gradient is not finite", trace)
            gnorm = float(np.linalg.norm(g))
            converged = gnorm <= stop
        trace.records.append(IterationRecord(
            iteration=it, f=f, f_candidate=f_new, gnorm=gnorm_used,
            delta=used_delta, sigma=sigma, accepted=accepted,
            cg_iters=cg_iters, cg_exit=exit_reason, step_norm=dnorm))

    return SolveResult(w=w, f=f, gnorm=gnorm, converged=converged, trace=trace)
