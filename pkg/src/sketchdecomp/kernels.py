"""Hot numeric kernels, each in a numba and a numpy flavour.

Sub-sketch stacks are handled as 4-d arrays of shape ``(n, m, d, w)``; the
row-major flattening of that array to ``(n*m*d, w)`` is exactly the block
order M_11, ..., M_1m, ..., M_n1, ..., M_nm.  Window and branch indices are
0-based here.

The public names at the bottom resolve to one flavour according to
:mod:`sketchdecomp._accel`.  Both flavours are importable explicitly as
``<name>_nb`` / ``<name>_np`` so tests and the benchmark can compare them.
"""

import numpy as np
from scipy.linalg import solve_banded

from ._accel import USE_NUMBA, njit

# --------------------------------------------------------------------------
# packet binning / sketch scatter


@njit(cache=True)
def bin_counts_nb(rows, cols, nrows, ncols):
    out = np.zeros((nrows, ncols), dtype=np.int64)
    for p in range(rows.shape[0]):
        r = rows[p]
        if r >= 0:
            out[r, cols[p]] += 1
    return out


def bin_counts_np(rows, cols, nrows, ncols):
    keep = rows >= 0
    flat = rows[keep].astype(np.int64) * ncols + cols[keep]
    return np.bincount(flat, minlength=nrows * ncols).reshape(nrows, ncols).astype(np.int64)


@njit(cache=True)
def scatter_sketches_nb(counts, hash_cols, w):
    # counts: (n, F); hash_cols: (d, F) -> (n, d, w)
    n, nflows = counts.shape
    d = hash_cols.shape[0]
    out = np.zeros((n, d, w))
    for k in range(n):
        for f in range(nflows):
            c = counts[k, f]
            if c != 0:
                for i in range(d):
                    out[k, i, hash_cols[i, f]] += c
    return out


def scatter_sketches_np(counts, hash_cols, w):
    counts = np.asarray(counts, dtype=np.float64)
    n = counts.shape[0]
    d, nflows = hash_cols.shape
    out = np.zeros((n, d, w))
    for i in range(d):
        onehot = np.zeros((nflows, w))
        onehot[np.arange(nflows), hash_cols[i]] = 1.0
        out[:, i, :] = counts @ onehot
    return out


# --------------------------------------------------------------------------
# B1: downstream window k (k = m-1 .. n-1, 0-based) collects M[k-i, i]


@njit(cache=True)
def b1_apply_nb(M):
    n, m, d, w = M.shape
    out = np.zeros((n - m + 1, d, w))
    for j in range(n - m + 1):
        k = j + m - 1
        for i in range(m):
            blk = M[k - i, i]
            for r in range(d):
                for c in range(w):
                    out[j, r, c] += blk[r, c]
    return out


def b1_apply_np(M):
    n, m = M.shape[:2]
    out = np.zeros((n - m + 1,) + M.shape[2:])
    for i in range(m):
        out += M[m - 1 - i:n - i, i]
    return out


@njit(cache=True)
def b1_adjoint_nb(Y, n, m):
    nr, d, w = Y.shape
    out = np.zeros((n, m, d, w))
    for j in range(nr):
        k = j + m - 1
        for i in range(m):
            for r in range(d):
                for c in range(w):
                    out[k - i, i, r, c] = Y[j, r, c]
    return out


def b1_adjoint_np(Y, n, m):
    out = np.zeros((n, m) + Y.shape[1:])
    for i in range(m):
        out[m - 1 - i:n - i, i] = Y
    return out


# --------------------------------------------------------------------------
# B2: upstream window k collects all of its branches


@njit(cache=True)
def b2_apply_nb(M):
    n, m, d, w = M.shape
    out = np.zeros((n, d, w))
    for k in range(n):
        for i in range(m):
            for r in range(d):
                for c in range(w):
                    out[k, r, c] += M[k, i, r, c]
    return out


def b2_apply_np(M):
    out = np.zeros((M.shape[0],) + M.shape[2:])
    for i in range(M.shape[1]):
        out += M[:, i]
    return out


@njit(cache=True)
def b2_adjoint_nb(V, m):
    n, d, w = V.shape
    out = np.empty((n, m, d, w))
    for k in range(n):
        for i in range(m):
            out[k, i] = V[k]
    return out


def b2_adjoint_np(V, m):
    return np.repeat(V[:, None], m, axis=1)


# --------------------------------------------------------------------------
# B3 (times the all-ones column): first differences of each block's row sums


@njit(cache=True)
def b3_rowsum_nb(M):
    n, m, d, w = M.shape
    out = np.empty((n, m, d - 1))
    rs = np.empty(d)
    for k in range(n):
        for i in range(m):
            for r in range(d):
                s = 0.0
                for c in range(w):
                    s += M[k, i, r, c]
                rs[r] = s
            for r in range(d - 1):
                out[k, i, r] = rs[r] - rs[r + 1]
    return out


def b3_rowsum_np(M):
    rs = M.sum(axis=3)
    return rs[..., :-1] - rs[..., 1:]


@njit(cache=True)
def b3_adjoint_nb(y, w):
    n, m, dm1 = y.shape
    d = dm1 + 1
    out = np.empty((n, m, d, w))
    for k in range(n):
        for i in range(m):
            for r in range(d):
                v = 0.0
                if r < dm1:
                    v += y[k, i, r]
                if r > 0:
                    v -= y[k, i, r - 1]
                for c in range(w):
                    out[k, i, r, c] = v
    return out


def b3_adjoint_np(y, w):
    n, m, dm1 = y.shape
    col = np.zeros((n, m, dm1 + 1))
    col[..., :-1] += y
    col[..., 1:] -= y
    return np.repeat(col[..., None], w, axis=3)


# --------------------------------------------------------------------------
# (A A^T) x = rhs per block; A A^T = tridiag(-1, 2, -1) of order d-1


@njit(cache=True)
def solve_aat_nb(rhs):
    n, m, p = rhs.shape
    out = np.empty_like(rhs)
    cp = np.empty(p)
    dp = np.empty(p)
    for k in range(n):
        for i in range(m):
            # Thomas algorithm, sub/super diagonal -1, diagonal 2
            cp[0] = -0.5
            dp[0] = rhs[k, i, 0] / 2.0
            for r in range(1, p):
                denom = 2.0 + cp[r - 1]
                cp[r] = -1.0 / denom
                dp[r] = (rhs[k, i, r] + dp[r - 1]) / denom
            out[k, i, p - 1] = dp[p - 1]
            for r in range(p - 2, -1, -1):
                out[k, i, r] = dp[r] - cp[r] * out[k, i, r + 1]
    return out


def solve_aat_np(rhs):
    p = rhs.shape[-1]
    if p == 1:
        return rhs / 2.0
    ab = np.zeros((3, p))
    ab[0, 1:] = -1.0
    ab[1, :] = 2.0
    ab[2, :-1] = -1.0
    flat = rhs.reshape(-1, p).T
    return solve_banded((1, 1), ab, flat).T.reshape(rhs.shape)


_NAMES = (
    "bin_counts",
    "scatter_sketches",
    "b1_apply",
    "b1_adjoint",
    "b2_apply",
    "b2_adjoint",
    "b3_rowsum",
    "b3_adjoint",
    "solve_aat",
)

_suffix = "_nb" if USE_NUMBA else "_np"
bin_counts = globals()["bin_counts" + _suffix]
scatter_sketches = globals()["scatter_sketches" + _suffix]
b1_apply = globals()["b1_apply" + _suffix]
b1_adjoint = globals()["b1_adjoint" + _suffix]
b2_apply = globals()["b2_apply" + _suffix]
b2_adjoint = globals()["b2_adjoint" + _suffix]
b3_rowsum = globals()["b3_rowsum" + _suffix]
b3_adjoint = globals()["b3_adjoint" + _suffix]
solve_aat = globals()["solve_aat" + _suffix]
