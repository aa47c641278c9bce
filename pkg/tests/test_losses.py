import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import dense_problem
from tronlinear import FeatureMatrix, ProblemInstance, WorkerPool
from tronlinear import losses as L


def scalar_problem(x, y, C):
    return ProblemInstance(FeatureMatrix.dense([[x]]), [y], C)


def central_gradient(f, w, h=1e-6):
    g = np.zeros_like(w)
    for j in range(len(w)):
        e = np.zeros_like(w)
        e[j] = h
        g[j] = (f(w + e) - f(w - e)) / (2 * h)
    return g


def rel_err(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300)


def away_from_kink(p, rng, scale=0.3, gap=1e-3):
    while True:
        w = scale * rng.standard_normal(p.n_features)
        margins = 1.0 - p.y * (p.X.to_dense() @ w)
        if np.all(np.abs(margins) >= gap):
            return w


# -- logistic ----------------------------------------------------------------

def test_lr_at_zero():
    rng = np.random.default_rng(0)
    p = dense_problem(rng, 4, 3, C=1.0)
    s = L.fused_margin_pass_lr(p, np.zeros(3))
    assert s.f == pytest.approx(4 * math.log(2), rel=1e-15)
    np.testing.assert_allclose(s.dvec, 0.25)
    np.testing.assert_allclose(s.zhat, -p.y / 2)
    np.testing.assert_allclose(s.alpha, math.log(2))
    np.testing.assert_allclose(L.gradient_lr(p, s, np.zeros(3)),
                               -(p.C / 2) * (p.X.to_dense().T @ p.y))


def test_lr_scalar_oracle():
    p = scalar_problem(1.0, 1.0, 2.0)
    s = L.fused_margin_pass_lr(p, [1.0])
    h = 1 / (1 + math.exp(-1))
    assert s.z[0] == 1.0
    assert s.f == pytest.approx(0.5 + 2 * math.log(1 + math.exp(-1)), rel=1e-12)
    assert L.objective_lr(p, [1.0]) == pytest.approx(s.f, rel=1e-14)
    assert s.dvec[0] == pytest.approx(h * (1 - h), rel=1e-12)
    g = L.gradient_lr(p, s, np.array([1.0]))
    assert g[0] == pytest.approx(1 - 2 / (1 + math.e), rel=1e-12)
    assert g[0] == pytest.approx(1 + 2 * (h - 1), rel=1e-12)


def test_lr_saturated_limit():
    X = FeatureMatrix.dense([[1.0, 0.0], [0.0, -1.0]])
    p = ProblemInstance(X, [1.0, -1.0], 1.0)
    w = np.array([800.0, 800.0])  # margins far beyond exp overflow
    s = L.fused_margin_pass_lr(p, w)
    assert np.all(np.isfinite([s.f]))
    assert s.f == pytest.approx(0.5 * w @ w, rel=1e-15)
    np.testing.assert_array_equal(s.zhat, 0.0)
    np.testing.assert_array_equal(s.dvec, 0.0)
    np.testing.assert_allclose(L.gradient_lr(p, s, w), w)
    # and the opposite sign does not overflow either
    s2 = L.fused_margin_pass_lr(p, -w)
    assert math.isfinite(s2.f)
    assert s2.f == pytest.approx(0.5 * w @ w + 1600.0, rel=1e-15)


def test_lr_state_invariants():
    rng = np.random.default_rng(1)
    p = dense_problem(rng, 40, 6, C=0.7)
    s = L.fused_margin_pass_lr(p, rng.standard_normal(6))
    assert np.all((s.zhat * p.y > -1) & (s.zhat * p.y < 0))
    assert np.all((s.dvec > 0) & (s.dvec <= 0.25))
    assert np.all(s.alpha >= 0) and s.f >= 0


def test_lr_objective_grows_quadratically():
    rng = np.random.default_rng(2)
    p = dense_problem(rng, 30, 4)
    w = rng.standard_normal(4)
    for t in (10.0, 100.0, 1000.0):
        f = L.objective_lr(p, t * w)
        bound = p.C * np.sum(np.abs(p.X.to_dense() @ (t * w))) + p.C * 30 * math.log(2)
        assert 0.5 * t * t * (w @ w) <= f <= 0.5 * t * t * (w @ w) + bound


def test_lr_hessian_examples():
    p = ProblemInstance(FeatureMatrix.dense(np.eye(2)), [1.0, -1.0], 1.0)
    s = L.fused_margin_pass_lr(p, np.zeros(2))
    # explicit Hessian: I + C X^T D X with D = 0.25 I
    H = np.eye(2) + 0.25 * np.eye(2)
    np.testing.assert_allclose(L.hessian_vec_lr(p, s, [1.0, 1.0]), H @ [1, 1])
    np.testing.assert_allclose(L.hessian_vec_lr(p, s, [1.0, 1.0]), [1.25, 1.25])
    assert not L.hessian_vec_lr(p, s, np.zeros(2)).any()
    p0 = ProblemInstance(FeatureMatrix.dense(np.zeros((3, 2))), [1.0, 1, -1], 5.0)
    s0 = L.fused_margin_pass_lr(p0, [0.3, 0.1])
    np.testing.assert_array_equal(L.hessian_vec_lr(p0, s0, [2.0, -1.0]), [2, -1])


def test_stale_state_is_rejected():
    rng = np.random.default_rng(3)
    p = dense_problem(rng, 10, 3)
    s = L.fused_margin_pass_lr(p, np.ones(3))
    with pytest.raises(L.StaleStateError):
        L.gradient_lr(p, s, np.zeros(3))
    t = L.fused_margin_pass_svm(p, np.ones(3))
    with pytest.raises(L.StaleStateError):
        L.gradient_svm(p, t, np.zeros(3))


# -- L2-SVM ------------------------------------------------------------------

def test_svm_at_zero():
    rng = np.random.default_rng(4)
    p = dense_problem(rng, 5, 3)
    s = L.fused_margin_pass_svm(p, np.zeros(3))
    assert s.active.tolist() == [0, 1, 2, 3, 4]
    assert s.f == 5.0
    np.testing.assert_allclose(L.gradient_svm(p, s, np.zeros(3)),
                               -2 * p.C * (p.X.to_dense().T @ p.y))


def test_svm_empty_active_set():
    X = FeatureMatrix.dense([[1.0], [-2.0]])
    p = ProblemInstance(X, [1.0, -1.0], 3.0)
    w = np.array([2.0])
    s = L.fused_margin_pass_svm(p, w)
    assert s.active.size == 0
    assert s.f == 0.5 * 4
    np.testing.assert_array_equal(L.gradient_svm(p, s, w), w)
    v = np.array([1.5])
    np.testing.assert_array_equal(L.hessian_vec_svm(p, s, v, L.INDIRECT), v)
    np.testing.assert_array_equal(
        L.hessian_vec_svm(p, s, v, L.GATHERED, FeatureMatrix.dense(np.zeros((0, 1)))), v)
    np.testing.assert_array_equal(L.precond_diag(p, s, L.Loss.SVM), [1.0])


def test_svm_strict_active_set_example():
    # z = (0.5, 2, -1), y = (1, 1, -1): margins 0.5, -1, 0
    p = ProblemInstance(FeatureMatrix.dense([[0.5], [2.0], [-1.0]]),
                        [1.0, 1.0, -1.0], 1.0)
    s = L.fused_margin_pass_svm(p, [1.0])
    np.testing.assert_array_equal(s.z, [0.5, 2.0, -1.0])
    assert s.active.tolist() == [0]
    assert s.f == pytest.approx(0.5 + 0.25)


def test_svm_scalar_gradient():
    p = scalar_problem(1.0, 1.0, 1.0)
    s = L.fused_margin_pass_svm(p, [0.5])
    assert L.gradient_svm(p, s, np.array([0.5]))[0] == pytest.approx(-0.5)


def test_svm_hessian_example():
    A = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
    # y and w chosen so that exactly rows 0 and 2 are active
    p = ProblemInstance(FeatureMatrix.dense(A), [1.0, 1.0, -1.0], 1.0)
    w = np.array([0.0, 2.0])
    s = L.fused_margin_pass_svm(p, w)
    assert s.active.tolist() == [0, 2]
    v = np.array([1.0, 0.0])
    expected = v + 2 * (1 * A[0] + 1 * A[2])
    np.testing.assert_array_equal(expected, [5, 2])
    np.testing.assert_allclose(L.hessian_vec_svm(p, s, v, L.INDIRECT), expected)
    from tronlinear.linalg import gather_rows
    np.testing.assert_allclose(
        L.hessian_vec_svm(p, s, v, L.GATHERED, gather_rows(p.X, s.active)),
        expected)
    with pytest.raises(L.StrategyError):
        L.hessian_vec_svm(p, s, v, L.GATHERED)


def test_active_set_strictness():
    p = ProblemInstance(FeatureMatrix.dense([[1.0], [2.0]]), [1.0, 1.0], 1.0)
    s = L.fused_margin_pass_svm(p, [0.5])  # margins 0.5, 0
    assert s.active.tolist() == [0]
    s = L.fused_margin_pass_svm(p, [0.5 - 1e-9])
    assert s.active.tolist() == [0, 1]
    s = L.fused_margin_pass_svm(p, [1.0])  # margins 0, -1
    assert s.active.tolist() == []


# -- preconditioner ------------------------------------------------------------

def test_precond_examples():
    p = ProblemInstance(FeatureMatrix.dense([[2.0]]), [1.0], 1.0)
    s = L.fused_margin_pass_lr(p, [0.0])
    np.testing.assert_allclose(L.precond_diag(p, s, "lr"), [2.0])
    p0 = ProblemInstance(FeatureMatrix.dense(np.zeros((3, 4))), [1.0, -1, 1], 2.0)
    for loss in L.Loss:
        s = L.fused_margin_pass(loss, p0, np.ones(4))
        np.testing.assert_array_equal(L.precond_diag(p0, s, loss), np.ones(4))


def test_precond_is_hessian_diagonal():
    rng = np.random.default_rng(5)
    p = dense_problem(rng, 25, 4, C=0.5, sparse=True)
    w = 0.3 * rng.standard_normal(4)
    for loss in L.Loss:
        s = L.fused_margin_pass(loss, p, w)
        hv = (lambda v: L.hessian_vec_lr(p, s, v)) if loss is L.Loss.LR \
            else (lambda v: L.hessian_vec_svm(p, s, v))
        diag = np.array([hv(e)[j] for j, e in enumerate(np.eye(4))])
        M = L.precond_diag(p, s, loss)
        np.testing.assert_allclose(M, diag, rtol=1e-13)
        assert np.all(M >= 1)


# -- property checks ----------------------------------------------------------

problems = st.tuples(st.integers(0, 2 ** 32 - 1), st.sampled_from([0.1, 1.0, 10.0]),
                     st.booleans())


@settings(max_examples=25, deadline=None)
@given(problems)
def test_gradients_match_finite_differences(params):
    seed, C, sparse = params
    rng = np.random.default_rng(seed)
    p = dense_problem(rng, int(rng.integers(5, 51)), int(rng.integers(1, 11)),
                      C, sparse)
    w = 0.3 * rng.standard_normal(p.n_features)
    s = L.fused_margin_pass_lr(p, w)
    fd = central_gradient(lambda x: L.objective_lr(p, x), w)
    assert rel_err(L.gradient_lr(p, s, w), fd) <= 1e-6

    w = away_from_kink(p, rng)
    s = L.fused_margin_pass_svm(p, w)
    fd = central_gradient(lambda x: L.objective_svm(p, x), w)
    assert rel_err(L.gradient_svm(p, s, w), fd) <= 1e-6


@settings(max_examples=25, deadline=None)
@given(problems)
def test_hessian_vec_matches_finite_differences(params):
    seed, C, sparse = params
    rng = np.random.default_rng(seed)
    p = dense_problem(rng, int(rng.integers(5, 51)), int(rng.integers(1, 11)),
                      C, sparse)
    v = rng.standard_normal(p.n_features)
    eps = 1e-6

    def grad(loss, x):
        s = L.fused_margin_pass(loss, p, x)
        return L.gradient(loss, p, s, x)

    w = 0.3 * rng.standard_normal(p.n_features)
    s = L.fused_margin_pass_lr(p, w)
    fd = (grad("lr", w + eps * v) - grad("lr", w - eps * v)) / (2 * eps)
    assert rel_err(L.hessian_vec_lr(p, s, v), fd) <= 1e-5

    w = away_from_kink(p, rng, gap=1e-2)
    s = L.fused_margin_pass_svm(p, w)
    fd = (grad("l2svm", w + eps * v) - grad("l2svm", w - eps * v)) / (2 * eps)
    assert rel_err(L.hessian_vec_svm(p, s, v), fd) <= 1e-5


@settings(max_examples=40, deadline=None)
@given(problems)
def test_hessian_dominates_identity(params):
    seed, C, sparse = params
    rng = np.random.default_rng(seed)
    p = dense_problem(rng, 20, 5, C, sparse)
    w = rng.standard_normal(5)
    v = rng.standard_normal(5)
    for loss in L.Loss:
        s = L.fused_margin_pass(loss, p, w)
        hv = L.hessian_vec_lr(p, s, v) if loss is L.Loss.LR else L.hessian_vec_svm(p, s, v)
        assert v @ hv >= (v @ v) * (1 - 1e-14)


@settings(max_examples=40, deadline=None)
@given(problems)
def test_fused_objective_matches_standalone(params):
    seed, C, sparse = params
    rng = np.random.default_rng(seed)
    p = dense_problem(rng, 30, 6, C, sparse)
    w = rng.standard_normal(6)
    s = L.fused_margin_pass_lr(p, w)
    assert abs(s.f - L.objective_lr(p, w)) <= 1e-14 * abs(s.f)
    t = L.fused_margin_pass_svm(p, w)
    assert abs(t.f - L.objective_svm(p, w)) <= 1e-14 * abs(t.f)


def test_strategies_agree_on_random_active_sets():
    rng = np.random.default_rng(6)
    p = dense_problem(rng, 120, 9, C=2.0)
    from tronlinear.linalg import gather_rows
    for _ in range(30):
        w = rng.standard_normal(9) * rng.uniform(0.01, 2)
        s = L.fused_margin_pass_svm(p, w)
        v = rng.standard_normal(9)
        a = L.hessian_vec_svm(p, s, v, L.INDIRECT)
        b = L.hessian_vec_svm(p, s, v, L.GATHERED, gather_rows(p.X, s.active))
        assert rel_err(a, b) <= 1e-12


@pytest.mark.parametrize("workers", [2, 4, 8])
def test_pooled_fused_passes_agree(workers):
    rng = np.random.default_rng(8)
    p = dense_problem(rng, 500, 7, C=1.5, sparse=True)
    w = rng.standard_normal(7)
    with WorkerPool(workers) as pool:
        a = L.fused_margin_pass_lr(p, w)
        b = L.fused_margin_pass_lr(p, w, pool)
        assert b.f == pytest.approx(a.f, rel=1e-13)
        np.testing.assert_allclose(b.zhat, a.zhat, rtol=1e-12)
        c = L.fused_margin_pass_svm(p, w)
        d = L.fused_margin_pass_svm(p, w, pool)
        np.testing.assert_array_equal(c.active, d.active)
        assert d.f == pytest.approx(c.f, rel=1e-13)


def test_problem_validation():
    X = FeatureMatrix.dense(np.eye(2))
    with pytest.raises(ValueError):
        ProblemInstance(X, [1.0, 2.0], 1.0)
    with pytest.raises(ValueError):
        ProblemInstance(X, [1.0, -1.0], 0.0)
    with pytest.raises(ValueError):
        ProblemInstance(X, [1.0], 1.0)
