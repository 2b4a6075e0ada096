"""Independent brute-force oracles shared by unit and acceptance tests."""

import itertools

import numpy as np


def centered_sse(X, y, B):
    """SSE of y ~ b0 + X b for every row b of B, with b0 at its optimum."""
    Xc = X - X.mean(0)
    yc = y - y.mean()
    G, h, c = Xc.T @ Xc, Xc.T @ yc, float(yc @ yc)
    # quadratic form keeps memory at O(len(B) * k)
    return c - 2.0 * B @ h + np.einsum("ij,ij->i", B @ G, B)


def _grid(axes):
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, len(axes))


def grid_min_sse(X, y, hi=3.0, coarse=0.03, fine=1e-3):
    """Minimum SSE over the non-negative orthant by a two-level grid search.

    A coarse grid covers [0, hi]^k; a fine grid of step ``fine`` then covers
    one coarse cell on each side of the coarse minimum.
    """
    k = X.shape[1]
    axis = np.arange(0.0, hi + coarse / 2, coarse)
    B = _grid([axis] * k)
    s = centered_sse(X, y, B)
    b = B[np.argmin(s)]
    local = [np.arange(max(0.0, c - coarse), c + coarse + fine / 2, fine) for c in b]
    B2 = _grid(local)
    s2 = centered_sse(X, y, B2)
    return float(min(s.min(), s2.min()))


def enumerate_nnls(X, y):
    """Exact NNLS with free intercept by enumerating every active set."""
    Xc = X - X.mean(0)
    yc = y - y.mean()
    k = X.shape[1]
    best, best_b = float(yc @ yc), np.zeros(k)
    for r in range(1, k + 1):
        for cols in itertools.combinations(range(k), r):
            sub = Xc[:, cols]
            coef = np.linalg.lstsq(sub, yc, rcond=None)[0]
            if np.any(coef < 0):
                continue
            b = np.zeros(k)
            b[list(cols)] = coef
            res = yc - Xc @ b
            if res @ res < best:
                best, best_b = float(res @ res), b
    return best, best_b


def monotone_step_candidates(n):
    """Every partition of 0..n-1 into consecutive blocks, as block label arrays."""
    for cuts in itertools.product((0, 1), repeat=n - 1):
        labels = np.concatenate([[0], np.cumsum(cuts, dtype=np.int64)]).astype(np.int64)
        yield labels


def best_monotone_step_sse(y, w, increasing=True):
    """Smallest weighted SSE among monotone step fits built from block means.

    The weighted isotonic solution is always a block-mean step function, so
    enumerating all consecutive partitions and keeping the monotone ones
    gives the exact optimum for small n.
    """
    y = np.asarray(y, dtype=float)
    w = np.asarray(w, dtype=float)
    best = np.inf
    for labels in monotone_step_candidates(y.size):
        m = np.bincount(labels, weights=w * y) / np.bincount(labels, weights=w)
        d = np.diff(m)
        if (increasing and np.any(d < 0)) or (not increasing and np.any(d > 0)):
            continue
        f = m[labels]
        best = min(best, float(w @ (y - f) ** 2))
    return best
