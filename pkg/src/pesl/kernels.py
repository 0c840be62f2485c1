"""Hot numeric kernels, built twice: numba @njit and pure numpy.

Every reduction here is order-canonical: the terms of a sum are
sorted ascending by value before accumulating. A row or column
permutation of the operands permutes the terms of each sum but never
their sorted order, so shuffled and plain computations produce
bit-identical floats, not merely close ones. Plain left-to-right
accumulation does NOT have this property; the reorder injects
last-ulp noise that thousands of training steps amplify past any
useful tolerance. Sorting costs a small constant factor at the
matrix sizes this package targets (tens of columns).

Both builds use the same definition - sort ascending, then accumulate
left to right - so a pure-Python reimplementation of that rule is an
exact oracle for either. Strict bit-level assertions still compare
within a single build: libm details (exp, sqrt) are the compiler's.

The public names (matmul_kernel, softmax_kernel, ...) are bound to
one build at import time; see backend.py. Benchmarks and parity
tests reach both builds directly via the np_* / nb_* names.
"""

import numpy as np

from .backend import HAVE_NUMBA


# pure-numpy build


def _np_sortsum(terms, axis):
    """Sum with terms sorted ascending, accumulated left to right.

    cumsum is sequential, so taking its last slice reproduces the
    numba build's explicit loop exactly; np.sum would not (it reduces
    pairwise above tiny sizes).
    """
    if terms.shape[axis] == 0:
        return terms.sum(axis=axis)
    s = np.cumsum(np.sort(terms, axis=axis), axis=axis)
    return np.take(s, -1, axis=axis)


def np_matmul(a, b):
    """Matrix product; each entry sums its k products in value order."""
    terms = a[:, :, None] * b[None, :, :]
    return _np_sortsum(terms, axis=1)


def np_colsum(a):
    """Column sums with each column's terms accumulated in value order."""
    return _np_sortsum(a, axis=0)


def np_softmax_rows(x):
    """Row-wise softmax, max-shifted for stability."""
    shift = x - x.max(axis=1, keepdims=True)
    e = np.exp(shift)
    return e / _np_sortsum(e, axis=1)[:, None]


def np_softmax_rows_bwd(s, g):
    """Row-wise softmax Jacobian product: dx_ij = s_ij (g_ij - g_i . s_i)."""
    dot = _np_sortsum(g * s, axis=1)[:, None]
    return s * (g - dot)


def np_layernorm_fwd(x, gamma, beta, eps):
    """Per-row normalization with affine. Returns (y, xhat, inv_std)."""
    n = x.shape[1]
    mu = (_np_sortsum(x, axis=1) / n)[:, None]
    centered = x - mu
    var = (_np_sortsum(centered * centered, axis=1) / n)[:, None]
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std
    return xhat * gamma + beta, xhat, inv_std[:, 0].copy()


def np_layernorm_bwd(xhat, inv_std, gamma, dy):
    """Backward of np_layernorm_fwd. Returns (dx, dgamma, dbeta)."""
    n = xhat.shape[1]
    dbeta = _np_sortsum(dy, axis=0)
    dgamma = _np_sortsum(dy * xhat, axis=0)
    dxhat = dy * gamma
    m1 = (_np_sortsum(dxhat, axis=1) / n)[:, None]
    m2 = (_np_sortsum(dxhat * xhat, axis=1) / n)[:, None]
    dx = inv_std[:, None] * (dxhat - m1 - xhat * m2)
    return dx, dgamma, dbeta


if HAVE_NUMBA:
    from numba import njit

    @njit(cache=True)
    def _nb_insert(buf, t, v):
        # keep buf[0:t] ascending while inserting term t
        s = t - 1
        while s >= 0 and buf[s] > v:
            buf[s + 1] = buf[s]
            s -= 1
        buf[s + 1] = v

    @njit(cache=True)
    def nb_matmul(a, b):
        m, kk = a.shape
        n = b.shape[1]
        out = np.empty((m, n), dtype=np.float64)
        buf = np.empty(kk, dtype=np.float64)
        for i in range(m):
            for j in range(n):
                for k in range(kk):
                    _nb_insert(buf, k, a[i, k] * b[k, j])
                acc = 0.0
                for k in range(kk):
                    acc += buf[k]
                out[i, j] = acc
        return out

    @njit(cache=True)
    def nb_colsum(a):
        m, n = a.shape
        out = np.empty(n, dtype=np.float64)
        buf = np.empty(m, dtype=np.float64)
        for j in range(n):
            for i in range(m):
                _nb_insert(buf, i, a[i, j])
            acc = 0.0
            for i in range(m):
                acc += buf[i]
            out[j] = acc
        return out

    @njit(cache=True)
    def nb_softmax_rows(x):
        m, n = x.shape
        out = np.empty((m, n), dtype=np.float64)
        buf = np.empty(n, dtype=np.float64)
        for i in range(m):
            hi = x[i, 0]
            for j in range(1, n):
                if x[i, j] > hi:
                    hi = x[i, j]
            for j in range(n):
                e = np.exp(x[i, j] - hi)
                out[i, j] = e
                _nb_insert(buf, j, e)
            total = 0.0
            for j in range(n):
                total += buf[j]
            for j in range(n):
                out[i, j] /= total
        return out

    @njit(cache=True)
    def nb_softmax_rows_bwd(s, g):
        m, n = s.shape
        out = np.empty((m, n), dtype=np.float64)
        buf = np.empty(n, dtype=np.float64)
        for i in range(m):
            for j in range(n):
                _nb_insert(buf, j, g[i, j] * s[i, j])
            dot = 0.0
            for j in range(n):
                dot += buf[j]
            for j in range(n):
                out[i, j] = s[i, j] * (g[i, j] - dot)
        return out

    @njit(cache=True)
    def nb_layernorm_fwd(x, gamma, beta, eps):
        m, n = x.shape
        y = np.empty((m, n), dtype=np.float64)
        xhat = np.empty((m, n), dtype=np.float64)
        inv_std = np.empty(m, dtype=np.float64)
        buf = np.empty(n, dtype=np.float64)
        for i in range(m):
            for j in range(n):
                _nb_insert(buf, j, x[i, j])
            mu = 0.0
            for j in range(n):
                mu += buf[j]
            mu /= n
            for j in range(n):
                c = x[i, j] - mu
                _nb_insert(buf, j, c * c)
            var = 0.0
            for j in range(n):
                var += buf[j]
            var /= n
            istd = 1.0 / np.sqrt(var + eps)
            inv_std[i] = istd
            for j in range(n):
                h = (x[i, j] - mu) * istd
                xhat[i, j] = h
                y[i, j] = h * gamma[j] + beta[j]
        return y, xhat, inv_std

    @njit(cache=True)
    def nb_layernorm_bwd(xhat, inv_std, gamma, dy):
        m, n = xhat.shape
        dx = np.empty((m, n), dtype=np.float64)
        dgamma = np.empty(n, dtype=np.float64)
        dbeta = np.empty(n, dtype=np.float64)
        colbuf = np.empty(m, dtype=np.float64)
        for j in range(n):
            for i in range(m):
                _nb_insert(colbuf, i, dy[i, j] * xhat[i, j])
            acc = 0.0
            for i in range(m):
                acc += colbuf[i]
            dgamma[j] = acc
            for i in range(m):
                _nb_insert(colbuf, i, dy[i, j])
            acc = 0.0
            for i in range(m):
                acc += colbuf[i]
            dbeta[j] = acc
        buf = np.empty(n, dtype=np.float64)
        for i in range(m):
            for j in range(n):
                _nb_insert(buf, j, dy[i, j] * gamma[j])
            m1 = 0.0
            for j in range(n):
                m1 += buf[j]
            m1 /= n
            for j in range(n):
                _nb_insert(buf, j, dy[i, j] * gamma[j] * xhat[i, j])
            m2 = 0.0
            for j in range(n):
                m2 += buf[j]
            m2 /= n
            for j in range(n):
                dxh = dy[i, j] * gamma[j]
                dx[i, j] = inv_std[i] * (dxh - m1 - xhat[i, j] * m2)
        return dx, dgamma, dbeta

    matmul_kernel = nb_matmul
    colsum_kernel = nb_colsum
    softmax_kernel = nb_softmax_rows
    softmax_bwd_kernel = nb_softmax_rows_bwd
    layernorm_fwd_kernel = nb_layernorm_fwd
    layernorm_bwd_kernel = nb_layernorm_bwd
else:
    matmul_kernel = np_matmul
    colsum_kernel = np_colsum
    softmax_kernel = np_softmax_rows
    softmax_bwd_kernel = np_softmax_rows_bwd
    layernorm_fwd_kernel = np_layernorm_fwd
    layernorm_bwd_kernel = np_layernorm_bwd
