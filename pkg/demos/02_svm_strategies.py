"""
Two ways to apply the L2-SVM Hessian
====================================

The squared-hinge Hessian only involves the active rows
I = {i : 1 - y_i x_i.w > 0}.  The gathered strategy copies X[I, :] once per
accepted step; the indirect strategy walks the rows through I.  Both give
the same iterates, at very different memory cost.
"""

from tronlinear import (BudgetExceeded, ExecutionPlan, TrustRegionConfig,
                        ledger_report, solve, synthetic_problem)

p = synthetic_problem(20_000, 18, C=1.0, seed=3)  # dense, n = 18
cfg = TrustRegionConfig(eps=1e-6)

for plan in (ExecutionPlan(svm_strategy="gathered"),
             ExecutionPlan(svm_strategy="indirect")):
    with plan:
        res = solve(p, "l2svm", cfg, plan)
    rep = ledger_report(plan)
    print(f"{plan.svm_strategy.value:>9}: f={res.f:.10f} "
          f"accepted={res.trace.accepted_steps} "
          f"peak auxiliary bytes={rep['peak_auxiliary_bytes']:,}")

# A tight budget makes the gathered strategy refuse and point at the fix.
try:
    with ExecutionPlan.staged(budget_bytes=1 << 20) as plan:
        solve(p, "l2svm", cfg, plan)
except BudgetExceeded as exc:
    print("budget:", exc)
