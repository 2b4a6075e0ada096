import numpy as np
import pytest
from scipy.optimize import nnls as scipy_nnls

from oracles import centered_sse, enumerate_nnls, grid_min_sse
from ratiodecomp.nnls import kkt_violations, nnls, nnls_gram, nnls_with_intercept


def instance(rng, k, T):
    X = rng.normal(size=(T, k))
    beta = rng.uniform(-0.5, 1.0, size=k)
    y = X @ beta + 0.3 * rng.normal(size=T) + rng.normal()
    return X, y


def test_matches_scipy():
    rng = np.random.default_rng(0)
    for _ in range(50):
        m, n = rng.integers(3, 30), rng.integers(1, 8)
        A = rng.normal(size=(m, n))
        b = rng.normal(size=m)
        ours = nnls(A, b).x
        ref = scipy_nnls(A, b)[0]
        r1, r2 = A @ ours - b, A @ ref - b
        assert r1 @ r1 == pytest.approx(r2 @ r2, rel=1e-9, abs=1e-12)


def test_exact_recovery_when_feasible():
    rng = np.random.default_rng(1)
    A = rng.normal(size=(20, 4))
    x = np.array([0.5, 0.0, 2.0, 1.0])
    np.testing.assert_allclose(nnls(A, A @ x).x, x, atol=1e-10)


def test_kkt_holds():
    rng = np.random.default_rng(2)
    for _ in range(100):
        X, y = instance(rng, int(rng.integers(1, 4)), int(rng.integers(5, 13)))
        _, b, res = nnls_with_intercept(X, y)
        assert np.all(b >= 0)
        assert kkt_violations(res.gradient, res.x, 1e-8) == []


def test_enumeration_oracle():
    rng = np.random.default_rng(3)
    for _ in range(100):
        X, y = instance(rng, int(rng.integers(1, 4)), int(rng.integers(5, 13)))
        _, b, _ = nnls_with_intercept(X, y)
        sse = centered_sse(X, y, b[None, :])[0]
        ref, _ = enumerate_nnls(X, y)
        assert sse == pytest.approx(ref, rel=1e-10, abs=1e-12)


def test_grid_oracle_small():
    rng = np.random.default_rng(4)
    for _ in range(10):
        X, y = instance(rng, int(rng.integers(1, 4)), int(rng.integers(5, 13)))
        _, b, _ = nnls_with_intercept(X, y)
        sse = centered_sse(X, y, b[None, :])[0]
        g = grid_min_sse(X, y)
        assert sse <= g + 1e-12
        # a grid of step 1e-3 should land very close to the optimum
        assert g - sse < 1e-3 * (1 + sse)


def test_intercept_is_weighted_mean_when_all_zero():
    X = np.zeros((4, 2))
    y = np.array([1.0, 2.0, 3.0, 4.0])
    w = np.array([1.0, 1.0, 1.0, 5.0])
    b0, b, _ = nnls_with_intercept(X, y, w)
    assert b0 == pytest.approx(float(w @ y / w.sum()))
    assert np.all(b == 0)


def test_collinear_columns_do_not_break_fit():
    rng = np.random.default_rng(5)
    x = rng.normal(size=12)
    X = np.column_stack([x, x])
    y = 2 * x + 1
    b0, b, _ = nnls_with_intercept(X, y)
    np.testing.assert_allclose(b0 + X @ b, y, atol=1e-10)


def test_gram_shape_checked():
    with pytest.raises(ValueError):
        nnls_gram(np.eye(2), np.ones(3))


def test_kkt_detector():
    assert kkt_violations(np.array([0.0, 1.0]), np.array([1.0, 0.0])) == []
    assert kkt_violations(np.array([0.5, -1.0]), np.array([1.0, 0.0])) == [0, 1]
