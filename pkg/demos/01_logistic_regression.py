"""
Training L2-regularized logistic regression
===========================================

Fit a logistic model on a synthetic sparse problem and watch the
trust-region iterations.
"""

import numpy as np

from tronlinear import TrustRegionConfig, solve, synthetic_problem
from tronlinear.cli import predict_labels

# 5,000 instances, 200 features, about 5% of entries stored
p = synthetic_problem(5_000, 200, C=4.0, seed=1, density=0.05)
print(f"instances={p.n_instances} features={p.n_features} nnz={p.X.nnz}")

# eps is relative: stop once ||grad f|| <= eps * ||grad f(0)||
result = solve(p, "lr", TrustRegionConfig(eps=1e-4))

print(f"{'iter':>4} {'f':>14} {'sigma':>8} {'delta':>10} {'cg':>3} ok")
for r in result.trace.records:
    print(f"{r.iteration:>4} {r.f:>14.6f} {r.sigma:>8.3f} {r.delta:>10.3g} "
          f"{r.cg_iters:>3} {'y' if r.accepted else 'n'}")

# Gradients are computed only at the start point and after accepted steps.
tr = result.trace
print(f"accepted={tr.accepted_steps} gradients={tr.gradient_evaluations} "
      f"objectives={tr.objective_evaluations}")

accuracy = np.mean(predict_labels(p.X, result.w) == p.y)
print(f"training accuracy {accuracy:.3f}")
