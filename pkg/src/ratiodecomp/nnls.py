"""Non-negative least squares by the Lawson-Hanson active-set method.

The solver works on the normal equations (Gram matrix ``G = A'A`` and
``h = A'b``), which keeps it cheap when ``A`` has many rows and few columns.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericalError


@dataclass(frozen=True)
class NNLSResult:
    x: np.ndarray
    gradient: np.ndarray  # dSSE/dx = 2 (G x - h)
    iterations: int


def _solve_passive(G: np.ndarray, h: np.ndarray, passive: np.ndarray) -> np.ndarray:
    z = np.zeros_like(h)
    idx = np.flatnonzero(passive)
    if idx.size:
        sub = G[np.ix_(idx, idx)]
        # lstsq tolerates singular sub-blocks from collinear columns
        z[idx] = np.linalg.lstsq(sub, h[idx], rcond=None)[0]
    return z


def nnls_gram(G: np.ndarray, h: np.ndarray, tol: float | None = None, max_iter: int | None = None) -> NNLSResult:
    """Minimize ``x'Gx - 2h'x`` subject to ``x >= 0``.

    Parameters
    ----------
    G : (n, n) array
        Symmetric positive semi-definite Gram matrix.
    h : (n,) array
    tol : float, optional
        Dual feasibility tolerance; defaults to a multiple of machine
        precision scaled by ``G``.
    """
    G = np.asarray(G, dtype=float)
    h = np.asarray(h, dtype=float)
    n = h.shape[0]
    if G.shape != (n, n):
        raise ValueError("incompatible dimensions")
    if tol is None:
        scale = max(float(np.abs(G).max(initial=0.0)), float(np.abs(h).max(initial=0.0)), 1e-300)
        tol = 10 * max(n, 1) * np.finfo(float).eps * scale
    max_iter = max_iter or 30 * max(n, 1) + 50

    x = np.zeros(n)
    passive = np.zeros(n, dtype=bool)
    w = h - G @ x
    it = 0
    while True:
        candidates = (~passive) & (w > tol)
        if not candidates.any():
            break
        j = int(np.argmax(np.where(candidates, w, -np.inf)))
        passive[j] = True
        while True:
            it += 1
            if it > max_iter:
                raise NumericalError("NNLS did not converge")
            z = _solve_passive(G, h, passive)
            if np.all(z[passive] > 0):
                x = z
                break
            blocking = passive & (z <= 0)
            with np.errstate(divide="ignore", invalid="ignore"):
                ratios = np.where(blocking, x / (x - z), np.inf)
            k = int(np.argmin(ratios))
            x = x + float(ratios[k]) * (z - x)
            x[k] = 0.0
            passive &= x > 0
            x[~passive] = 0.0
        w = h - G @ x
    x[~passive] = 0.0
    return NNLSResult(x=x, gradient=-2.0 * (h - G @ x), iterations=it)


def nnls(A: np.ndarray, b: np.ndarray, weights: np.ndarray | None = None) -> NNLSResult:
    """Solve ``argmin ||W^(1/2) (A x - b)||`` for ``x >= 0``."""
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    if A.ndim != 2 or b.ndim != 1 or A.shape[0] != b.shape[0]:
        raise ValueError("expected matrix A (m, n) and vector b (m,)")
    if weights is not None:
        sw = np.sqrt(np.asarray(weights, dtype=float))
        A = A * sw[:, None]
        b = b * sw
    return nnls_gram(A.T @ A, A.T @ b)


def kkt_violations(gradient: np.ndarray, x: np.ndarray, tol: float = 1e-8) -> list[int]:
    """Indices breaking KKT: x_j > 0 needs |grad_j| <= tol, x_j = 0 needs grad_j >= -tol."""
    bad = []
    for j, (g, v) in enumerate(zip(gradient, x)):
        if (v > 0 and abs(g) > tol) or (v == 0 and g < -tol) or v < 0:
            bad.append(j)
    return bad


def nnls_with_intercept(
    X: np.ndarray, y: np.ndarray, weights: np.ndarray | None = None
) -> tuple[float, np.ndarray, NNLSResult]:
    """Weighted NNLS with a free (unconstrained) intercept.

    The intercept is profiled out by weighted centering, which is exact for
    least squares. Returns ``(intercept, coefs, result)``; ``result.gradient``
    is with respect to the centered problem, equal to the full-problem
    gradient at the optimal intercept.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    w = np.ones(y.shape[0]) if weights is None else np.asarray(weights, dtype=float)
    W = w.sum()
    xm = (w @ X) / W
    ym = float(w @ y) / W
    if X.shape[1] == 0:
        return ym, np.zeros(0), NNLSResult(np.zeros(0), np.zeros(0), 0)
    res = nnls(X - xm, y - ym, w)
    beta0 = ym - float(xm @ res.x)
    return beta0, res.x, res
