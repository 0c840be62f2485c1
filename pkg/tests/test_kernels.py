"""Kernel builds: permutation invariance and cross-build agreement.

Every reduction kernel accumulates its terms in ascending value order,
so a permutation of the reduced axis must change nothing at the bit
level. These tests pin that contract per build; the matmul and colsum
kernels (products and sums only, no transcendentals) are additionally
required to agree bit-for-bit across the numpy and numba builds.
"""

import numpy as np
import numpy.testing as npt
import pytest

from pesl import kernels
from pesl.backend import HAVE_NUMBA

needs_numba = pytest.mark.skipif(not HAVE_NUMBA, reason="numba not installed")

TRIALS = 40


def _perm_pair(rng, n):
    p = rng.permutation(n)
    inv = np.empty(n, dtype=np.intp)
    inv[p] = np.arange(n)
    return p, inv


def test_matmul_kernel_row_and_inner_permutations():
    rng = np.random.default_rng(2301)
    for _ in range(TRIALS):
        m, k, n = (int(x) for x in rng.integers(2, 14, 3))
        a = rng.standard_normal((m, k))
        b = rng.standard_normal((k, n))
        base = kernels.matmul_kernel(a, b)
        pr = rng.permutation(m)
        pk = rng.permutation(k)
        got = kernels.matmul_kernel(
            np.ascontiguousarray(a[pr][:, pk]),
            np.ascontiguousarray(b[pk, :]),
        )
        npt.assert_array_equal(got, base[pr])


def test_matmul_kernel_conjugation_is_exact():
    # z @ (P W P^-1) for permuted z equals the permuted plain product;
    # this is the identity the whole shuffle scheme leans on
    rng = np.random.default_rng(2302)
    for _ in range(TRIALS):
        p, d = (int(x) for x in rng.integers(2, 10, 2))
        z = rng.standard_normal((p, d))
        w = rng.standard_normal((d, d))
        pc, pc_inv = _perm_pair(rng, d)
        base = kernels.matmul_kernel(z, w)
        w_conj = np.ascontiguousarray(w[pc_inv][:, pc_inv])
        got = kernels.matmul_kernel(
            np.ascontiguousarray(z[:, pc_inv]), w_conj
        )
        npt.assert_array_equal(got, base[:, pc_inv])


def test_colsum_kernel_row_permutation():
    rng = np.random.default_rng(2303)
    for _ in range(TRIALS):
        m, n = (int(x) for x in rng.integers(1, 16, 2))
        a = rng.standard_normal((m, n))
        base = kernels.colsum_kernel(a)
        shuffled = np.ascontiguousarray(a[rng.permutation(m)])
        npt.assert_array_equal(kernels.colsum_kernel(shuffled), base)


def test_softmax_kernels_row_and_column_permutations():
    rng = np.random.default_rng(2304)
    for _ in range(TRIALS):
        m, n = (int(x) for x in rng.integers(2, 12, 2))
        x = rng.uniform(-20, 20, (m, n))
        g = rng.standard_normal((m, n))
        s = kernels.softmax_kernel(x)
        dx = kernels.softmax_bwd_kernel(s, g)
        pr = rng.permutation(m)
        pc = rng.permutation(n)
        xs = np.ascontiguousarray(x[pr][:, pc])
        ss = kernels.softmax_kernel(xs)
        npt.assert_array_equal(ss, s[pr][:, pc])
        gs = np.ascontiguousarray(g[pr][:, pc])
        npt.assert_array_equal(
            kernels.softmax_bwd_kernel(ss, gs), dx[pr][:, pc]
        )


def test_layernorm_kernels_row_and_column_permutations():
    rng = np.random.default_rng(2305)
    for _ in range(TRIALS):
        m, n = (int(x) for x in rng.integers(2, 12, 2))
        x = rng.standard_normal((m, n))
        gamma = rng.uniform(0.5, 1.5, n)
        beta = rng.uniform(-0.5, 0.5, n)
        dy = rng.standard_normal((m, n))
        y, xhat, inv_std = kernels.layernorm_fwd_kernel(x, gamma, beta, 1e-5)
        dx, dgamma, dbeta = kernels.layernorm_bwd_kernel(
            xhat, inv_std, gamma, dy
        )
        pr = rng.permutation(m)
        pc = rng.permutation(n)
        ys, xhats, inv_stds = kernels.layernorm_fwd_kernel(
            np.ascontiguousarray(x[pr][:, pc]),
            np.ascontiguousarray(gamma[pc]),
            np.ascontiguousarray(beta[pc]),
            1e-5,
        )
        npt.assert_array_equal(ys, y[pr][:, pc])
        npt.assert_array_equal(xhats, xhat[pr][:, pc])
        npt.assert_array_equal(inv_stds, inv_std[pr])
        dxs, dgammas, dbetas = kernels.layernorm_bwd_kernel(
            xhats,
            inv_stds,
            np.ascontiguousarray(gamma[pc]),
            np.ascontiguousarray(dy[pr][:, pc]),
        )
        npt.assert_array_equal(dxs, dx[pr][:, pc])
        npt.assert_array_equal(dgammas, dgamma[pc])
        npt.assert_array_equal(dbetas, dbeta[pc])


def test_sorted_sum_semantics_frozen():
    # the accumulation rule itself, pinned on a case where naive
    # left-to-right and pairwise orders both give different bits
    a = np.array([[1e16, 1.0, -1e16, 1.0, 3.0, -7.0, 0.25, 2.0]])
    b = np.ones((8, 1))
    acc = 0.0
    for v in sorted(a[0]):
        acc += v
    npt.assert_array_equal(kernels.matmul_kernel(a, b), [[acc]])
    npt.assert_array_equal(
        kernels.colsum_kernel(np.ascontiguousarray(a.T)), [acc]
    )


@needs_numba
def test_numpy_and_numba_matmul_agree_bitwise():
    rng = np.random.default_rng(2306)
    for _ in range(TRIALS):
        m, k, n = (int(x) for x in rng.integers(1, 20, 3))
        a = rng.standard_normal((m, k))
        b = rng.standard_normal((k, n))
        npt.assert_array_equal(
            kernels.np_matmul(a, b), kernels.nb_matmul(a, b)
        )


@needs_numba
def test_numpy_and_numba_colsum_agree_bitwise():
    rng = np.random.default_rng(2307)
    for _ in range(TRIALS):
        m, n = (int(x) for x in rng.integers(1, 24, 2))
        a = rng.standard_normal((m, n))
        npt.assert_array_equal(kernels.np_colsum(a), kernels.nb_colsum(a))


def test_numpy_build_is_invariant_too():
    # the fallback build must satisfy the same contract as the active
    # one, whichever that is
    rng = np.random.default_rng(2308)
    for _ in range(TRIALS):
        m, k, n = (int(x) for x in rng.integers(2, 12, 3))
        a = rng.standard_normal((m, k))
        b = rng.standard_normal((k, n))
        pk = rng.permutation(k)
        npt.assert_array_equal(
            kernels.np_matmul(a[:, pk], b[pk, :]), kernels.np_matmul(a, b)
        )
