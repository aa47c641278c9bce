"""
Counting handoffs in the staged backend
=======================================

The staged backend keeps loss buffers in a separate execution context and
logs every buffer that crosses back.  A rejected candidate returns only its
scalar objective; the gradient moves only after an acceptance.
"""

import numpy as np

from tronlinear import (ExecutionPlan, TrustRegionConfig, check_schedule,
                        format_report, ledger_report, solve, synthetic_problem)

p = synthetic_problem(300, 10, C=100.0, seed=0, noise=0.0)

with ExecutionPlan.staged() as plan:
    res = solve(p, "l2svm", TrustRegionConfig(eps=1e-6), plan)

for rec in res.trace.records:
    kinds = [e.kind for e in plan.schedule if e.iteration == rec.iteration]
    print(f"iter {rec.iteration:>2} {'accept' if rec.accepted else 'reject'}: "
          f"scalar={kinds.count('scalar')} bulk={kinds.count('bulk')} "
          f"vector={kinds.count('vector')}")

print("schedule violations:", check_schedule(plan) or "none")
print(format_report(ledger_report(plan)), end="")
