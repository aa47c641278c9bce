"""Trust-region Newton training of L2-regularized logistic regression and
L2-loss SVM classifiers, with pluggable execution backends."""

from .backends import (Backend, BudgetExceeded, ExecutionPlan, TransferLedger,
                       check_schedule, execute_lr_iteration,
                       execute_svm_iteration, format_report, ledger_report)
from .data_io import (DatasetStats, ParseError, UnsupportedLabelError,
                      dataset_stats, load_dense, parse_libsvm, read_libsvm,
                      synthetic_problem, write_libsvm)
from .linalg import FeatureMatrix, WorkerPool
from .losses import GATHERED, INDIRECT, Loss, ProblemInstance, SvmStrategy
from .tron import (CgExit, NumericalFailure, SolveResult, TrustRegionConfig,
                   quadratic_model, solve, truncated_cg, trust_region_update)

__version__ = "0.1.0"

__all__ = [
    "Backend", "BudgetExceeded", "CgExit", "DatasetStats", "ExecutionPlan",
    "FeatureMatrix", "GATHERED", "INDIRECT", "Loss", "NumericalFailure",
    "ParseError", "ProblemInstance", "SolveResult", "SvmStrategy",
    "TransferLedger", "TrustRegionConfig", "UnsupportedLabelError",
    "WorkerPool", "check_schedule", "dataset_stats", "execute_lr_iteration",
    "execute_svm_iteration", "format_report", "ledger_report", "load_dense",
    "parse_libsvm", "quadratic_model", "read_libsvm", "solve",
    "synthetic_problem", "truncated_cg", "trust_region_update",
    "write_libsvm",
]
