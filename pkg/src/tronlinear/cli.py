"""Command-line driver: ``train``, ``predict`` and ``bench``.

Training flags follow LIBLINEAR conventions (``-c 4 -e 0.1 -s 0``, ``-nr 8``)
so published invocations work unchanged.  Exit codes: 0 success, 2 usage
error, 3 data error, 4 numerical failure, 5 memory budget exceeded.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from dataclasses import dataclass

import numpy as np

from . import data_io
from .backends import (DEFAULT_BUDGET_BYTES, Backend, BudgetExceeded,
                       ExecutionPlan, format_report, ledger_report)
from .linalg import DimensionError, FeatureMatrix, matvec
from .losses import Loss
from .tron import NumericalFailure, TrustRegionConfig, solve

log = logging.getLogger("tronlinear")

EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERICAL = 4
EXIT_BUDGET = 5

SOLVERS = {0: Loss.LR, 2: Loss.SVM}
SOLVER_NAMES = "0 (L2-regularized logistic regression), 2 (L2-loss SVM, primal)"


@dataclass
class ModelFile:
    loss: Loss
    C: float
    eps: float
    backend: str
    w: np.ndarray

    @property
    def n(self):
        return len(self.w)


def write_model(model, path):
    with open(path, "w") as fh:
        fh.write(f"solver_type {model.loss.value}\n")
        fh.write(f"nr_feature {model.n}\n")
        fh.write(f"C {model.C!r}\n")
        fh.write(f"eps {model.eps!r}\n")
        fh.write(f"backend {model.backend}\n")
        fh.write("w\n")
        for v in model.w:
            fh.write(f"{float(v)!r}\n")


def read_model(path):
    with open(path) as fh:
        lines = [ln.strip() for ln in fh]
    header = {}
    k = 0
    while k < len(lines) and lines[k] != "w":
        key, _, value = lines[k].partition(" ")
        header[key] = value.strip()
        k += 1
    try:
        n = int(header["nr_feature"])
        loss = Loss(header["solver_type"])
        w = np.array([float(v) for v in lines[k + 1:] if v])
        model = ModelFile(loss, float(header["C"]), float(header["eps"]),
                          header.get("backend", "seq"), w)
    except (KeyError, ValueError, IndexError) as exc:
        raise data_io.ParseError(k + 1, f"malformed model file: {exc}") from None
    if model.n != n:
        raise data_io.ParseError(
            k + 1, f"model declares {n} features but lists {model.n} weights")
    return model


def _solver(text):
    try:
        code = int(text)
    except ValueError:
        code = None
    if code not in SOLVERS:
        raise argparse.ArgumentTypeError(
            f"unsupported solver {text!r}; supported: {SOLVER_NAMES}")
    return code


def _positive_float(text):
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not value > 0:
        raise argparse.ArgumentTypeError(f"must be positive, got {text}")
    return value


def _positive_int(text):
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {text}")
    return value


def _int_list(text):
    return [_positive_int(t) for t in text.split(",") if t]


def _backend_list(text):
    out = []
    for t in text.split(","):
        try:
            out.append(Backend(t))
        except ValueError:
            raise argparse.ArgumentTypeError(
                f"unknown backend {t!r}; choose from seq, par, staged, mix"
            ) from None
    return out


def _add_training_flags(sp):
    sp.add_argument("-c", dest="C", type=_positive_float, default=1.0,
                    help="regularization weight C (default 1)")
    sp.add_argument("-e", dest="eps", type=_positive_float, default=0.1,
                    help="relative gradient-norm tolerance (default 0.1)")
    sp.add_argument("-s", dest="solver", type=_solver, default=0,
                    help=f"solver: {SOLVER_NAMES}")
    sp.add_argument("--precond", action="store_true",
                    help="diagonal preconditioner in the CG solver")
    sp.add_argument("--dense", type=_positive_int, metavar="N",
                    help="input is dense 'label v1 ... vN' text")
    sp.add_argument("--budget", type=_positive_int,
                    default=DEFAULT_BUDGET_BYTES,
                    help="byte ceiling for the gathered active submatrix")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="tronlinear",
        description="Trust-region Newton training for linear classifiers.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    tr = sub.add_parser("train", help="train a model")
    _add_training_flags(tr)
    tr.add_argument("-nr", dest="threads", type=_positive_int, default=1,
                    help="worker threads; > 1 implies --backend par unless "
                    "a backend is given")
    tr.add_argument("--backend", type=Backend, choices=list(Backend),
                    default=None)
    tr.add_argument("--report", metavar="PATH",
                    help="write the transfer ledger as key=value lines")
    tr.add_argument("input")
    tr.add_argument("model")

    pr = sub.add_parser("predict", help="predict with a trained model")
    pr.add_argument("--dense", type=_positive_int, metavar="N")
    pr.add_argument("input")
    pr.add_argument("model")
    pr.add_argument("output")

    be = sub.add_parser("bench", help="minimum-over-runs timing sweep")
    _add_training_flags(be)
    be.add_argument("--runs", type=_positive_int, default=10)
    be.add_argument("--backends", type=_backend_list, default=[Backend.SEQUENTIAL])
    be.add_argument("--threads", type=_int_list, default=[1])
    be.add_argument("--synthetic", metavar="L,N",
                    help="generate a dense random problem instead of reading a file")
    be.add_argument("--seed", type=int, default=0)
    be.add_argument("--report", metavar="PATH")
    be.add_argument("input", nargs="?")
    return parser


def _load(path, C, dense):
    with open(path) as fh:
        if dense:
            return data_io.load_dense(fh, dense, C)
        return data_io.parse_libsvm(fh, C)


def _plan_for(backend, threads, budget):
    if backend is None:
        backend = Backend.PARALLEL if threads > 1 else Backend.SEQUENTIAL
    if backend is Backend.SEQUENTIAL and threads > 1:
        raise ValueError("-nr > 1 conflicts with --backend seq")
    return ExecutionPlan(backend, threads, budget_bytes=budget)


def _train(args, parser):
    try:
        plan = _plan_for(args.backend, args.threads, args.budget)
    except ValueError as exc:
        parser.error(f"argument -nr: {exc}")
    p = _load(args.input, args.C, args.dense)
    loss = SOLVERS[args.solver]
    cfg = TrustRegionConfig(eps=args.eps, use_preconditioner=args.precond)
    with plan:
        start = time.perf_counter()
        result = solve(p, loss, cfg, plan)
        elapsed = time.perf_counter() - start
    write_model(ModelFile(loss, args.C, args.eps, plan.backend.value,
                          result.w), args.model)
    tr = result.trace
    print(f"training time: {elapsed:.6f} s")
    print(f"objective: {result.f!r}  iterations: {tr.outer_iterations}  "
          f"accepted: {tr.accepted_steps}  converged: {result.converged}")
    if args.report:
        report = ledger_report(plan)
        report.update(train_seconds=elapsed, objective=result.f,
                      accepted_steps=tr.accepted_steps,
                      converged=result.converged)
        with open(args.report, "w") as fh:
            fh.write(format_report(report))
    return 0


def _fit_columns(X, n):
    """Drop columns ``>= n`` and pad to ``n`` columns."""
    if X.n_cols == n:
        return X
    if not X.is_sparse:
        raise DimensionError(f"data has {X.n_cols} features, model has {n}")
    keep = X.col_indices < n
    if not keep.all():
        log.warning("ignoring feature indices beyond the model's %d features", n)
    rows = np.repeat(np.arange(X.n_rows), np.diff(X.row_offsets))
    counts = np.bincount(rows[keep], minlength=X.n_rows)
    offsets = np.concatenate([[0], np.cumsum(counts)])
    return FeatureMatrix.csr(offsets, X.col_indices[keep], X.values[keep], n)


def predict_labels(X, w):
    """``sign(x_i . w)`` with ties going to +1."""
    return np.where(matvec(X, w) >= 0, 1.0, -1.0)


def _predict(args):
    model = read_model(args.model)
    p = _load(args.input, 1.0, args.dense)
    X = _fit_columns(p.X, model.n)
    labels = predict_labels(X, model.w)
    with open(args.output, "w") as fh:
        for v in labels:
            fh.write("+1\n" if v > 0 else "-1\n")
    total = len(labels)
    correct = int(np.sum(labels == p.y))
    pct = 100.0 * correct / total if total else 0.0
    print(f"Accuracy = {pct:g}% ({correct}/{total})")
    return 0


def bench_configs(backends, threads):
    """Sequential baseline first, then every requested backend/thread combo."""
    configs = [(Backend.SEQUENTIAL, 1)]
    for b in backends:
        if b in (Backend.SEQUENTIAL, Backend.STAGED):
            cand = [(b, 1)]
        else:
            cand = [(b, t) for t in threads]
        configs.extend(c for c in cand if c not in configs)
    return configs


def run_bench(p, loss, cfg, configs, runs, budget=DEFAULT_BUDGET_BYTES):
    """Time ``solve`` under each configuration; returns one dict per row."""
    rows = []
    for backend, workers in configs:
        times, result = [], None
        for _ in range(runs):
            with ExecutionPlan(backend, workers, budget_bytes=budget) as plan:
                start = time.perf_counter()
                result = solve(p, loss, cfg, plan)
                times.append(time.perf_counter() - start)
        rows.append({"backend": backend.value, "workers": workers,
                     "min_seconds": min(times), "times": times,
                     "objective": result.f,
                     "accepted_steps": result.trace.accepted_steps})
    base = rows[0]["min_seconds"]
    for row in rows:
        row["speedup"] = base / row["min_seconds"] if row["min_seconds"] > 0 else 1.0
    return rows


def format_bench_table(rows):
    header = ["backend", "workers", "min_seconds", "speedup", "objective",
              "accepted"]
    body = [[r["backend"], str(r["workers"]), f"{r['min_seconds']:.6f}",
             f"{r['speedup']:.3f}", f"{r['objective']:.12g}",
             str(r["accepted_steps"])] for r in rows]
    widths = [max(len(h), *(len(b[k]) for b in body))
              for k, h in enumerate(header)]
    lines = ["  ".join(h.ljust(wd) for h, wd in zip(header, widths))]
    lines += ["  ".join(c.rjust(wd) if k else c.ljust(wd)
                        for k, (c, wd) in enumerate(zip(b, widths)))
              for b in body]
    return "\n".join(lines)


def _bench(args, parser):
    if args.synthetic:
        try:
            l, n = (int(t) for t in args.synthetic.split(","))
        except ValueError:
            parser.error("argument --synthetic: expected L,N")
        p = data_io.synthetic_problem(l, n, C=args.C, seed=args.seed)
    elif args.input:
        p = _load(args.input, args.C, args.dense)
    else:
        parser.error("argument input: required unless --synthetic is given")
    cfg = TrustRegionConfig(eps=args.eps, use_preconditioner=args.precond)
    configs = bench_configs(args.backends, args.threads)
    rows = run_bench(p, SOLVERS[args.solver], cfg, configs, args.runs,
                     args.budget)
    print(format_bench_table(rows))
    if args.report:
        with open(args.report, "w") as fh:
            for r in rows:
                key = f"{r['backend']}.{r['workers']}"
                fh.write(f"{key}.min_seconds={r['min_seconds']!r}\n")
                fh.write(f"{key}.speedup={r['speedup']!r}\n")
                fh.write(f"{key}.objective={r['objective']!r}\n")
    return 0


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    handlers = {"train": lambda: _train(args, parser),
                "predict": lambda: _predict(args),
                "bench": lambda: _bench(args, parser)}
    try:
        return handlers[args.command]()
    except BudgetExceeded as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    except NumericalFailure as exc:
        print(f"error: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
