"""Matrix ops with checked contracts.

A "matrix" throughout the package is a 2-D C-contiguous float64
ndarray with every entry finite. Ops validate shapes and finiteness
and raise ShapeError / ContractError instead of silently broadcasting;
heavy inner loops are delegated to the active kernel build (numba or
numpy, see backend.py), everything else is plain numpy.

Gradient conventions: for every op `f` with upstream gradient `g`
(same shape as the output), the backward returns dl/dx terms computed
with the exact formulas used by the encoder stack, so all of them are
checked against central finite differences in the test suite.
"""

from typing import Callable, NamedTuple

import numpy as np

from . import kernels
from .errors import ContractError, ShapeError

LN_EPS = 1e-5


def as_matrix(x) -> np.ndarray:
    """Validate and return `x` as a 2-D finite float64 C-order array."""
    a = np.ascontiguousarray(x, dtype=np.float64)
    if a.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got ndim={a.ndim}")
    if not np.isfinite(a).all():
        raise ContractError("matrix contains NaN or Inf")
    return a


def _finite(name: str, a: np.ndarray) -> np.ndarray:
    if not np.isfinite(a).all():
        raise ContractError(f"{name}: non-finite entries")
    return a


def matmul(a, b) -> np.ndarray:
    """Matrix product a @ b with an order-canonical summation.

    Each output entry sums its k products in ascending value order
    (see kernels.py), so permuting rows of `a` or columns of `b`, or
    conjugating both by the same permutation, yields bit-identical
    entries. BLAS is deliberately not used here.
    """
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dims differ, {a.shape} x {b.shape}")
    return _finite("matmul result", kernels.matmul_kernel(a, b))


def colsum(a) -> np.ndarray:
    """Sum over rows with the order-canonical accumulation.

    Bias gradients are column sums over the token axis; sorting the
    terms keeps them bit-identical when that axis is shuffled.
    """
    a = as_matrix(a)
    return kernels.colsum_kernel(a)


def _same_shape(op: str, a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes differ, {a.shape} vs {b.shape}")


def hadamard(a, b) -> np.ndarray:
    """Elementwise product of two same-shape matrices."""
    a = as_matrix(a)
    b = as_matrix(b)
    _same_shape("hadamard", a, b)
    return a * b


def add(a, b) -> np.ndarray:
    a = as_matrix(a)
    b = as_matrix(b)
    _same_shape("add", a, b)
    return a + b


def sub(a, b) -> np.ndarray:
    a = as_matrix(a)
    b = as_matrix(b)
    _same_shape("sub", a, b)
    return a - b


def scale(a, c: float) -> np.ndarray:
    a = as_matrix(a)
    if not np.isfinite(c):
        raise ContractError("scale: non-finite scalar")
    return a * float(c)


def neg(a) -> np.ndarray:
    return scale(a, -1.0)


def relu(x) -> np.ndarray:
    x = as_matrix(x)
    return np.maximum(x, 0.0)


def relu_grad(x) -> np.ndarray:
    """Derivative of relu wrt its input; exactly 0.0 at x == 0."""
    x = as_matrix(x)
    return (x > 0.0).astype(np.float64)


def tanh_act(x) -> np.ndarray:
    x = as_matrix(x)
    return np.tanh(x)


def tanh_grad(x) -> np.ndarray:
    x = as_matrix(x)
    t = np.tanh(x)
    return 1.0 - t * t


_ACTIVATIONS: dict[str, tuple[Callable, Callable]] = {
    "relu": (relu, relu_grad),
    "tanh": (tanh_act, tanh_grad),
}


def activation_pair(name: str) -> tuple[Callable, Callable]:
    """Return (f, f') for a supported activation name."""
    try:
        return _ACTIVATIONS[name]
    except KeyError:
        raise ContractError(
            f"unknown activation {name!r}, expected one of "
            f"{sorted(_ACTIVATIONS)}"
        ) from None


def softmax_rows(x) -> np.ndarray:
    """Row-wise softmax. Every output row sums to 1 (within rounding)."""
    x = as_matrix(x)
    return kernels.softmax_kernel(x)


def softmax_rows_backward(s, g) -> np.ndarray:
    """Jacobian-vector product of row-wise softmax.

    `s` must be a softmax output; rows are validated to sum to 1
    within 1e-6. For each row: dx_j = s_j * (g_j - sum_k g_k s_k).
    """
    s = as_matrix(s)
    g = as_matrix(g)
    _same_shape("softmax_rows_backward", s, g)
    row_sums = s.sum(axis=1)
    if np.abs(row_sums - 1.0).max() > 1e-6:
        raise ContractError(
            "softmax_rows_backward: rows of s must sum to 1 "
            f"(worst deviation {np.abs(row_sums - 1.0).max():.3e})"
        )
    return kernels.softmax_bwd_kernel(s, g)


class LayerNormCache(NamedTuple):
    """Forward-pass state needed by layernorm_rows_backward."""

    xhat: np.ndarray
    inv_std: np.ndarray
    gamma: np.ndarray


def _as_vector(name: str, v, n: int) -> np.ndarray:
    v = np.ascontiguousarray(v, dtype=np.float64)
    if v.shape != (n,):
        raise ShapeError(f"{name}: expected shape ({n},), got {v.shape}")
    return _finite(name, v)


def layernorm_rows(x, gamma, beta, eps: float = LN_EPS):
    """Per-row layer normalization with affine scale and shift.

    Returns (y, cache); pass the cache to layernorm_rows_backward.
    """
    x = as_matrix(x)
    gamma = _as_vector("gamma", gamma, x.shape[1])
    beta = _as_vector("beta", beta, x.shape[1])
    y, xhat, inv_std = kernels.layernorm_fwd_kernel(x, gamma, beta, eps)
    return y, LayerNormCache(xhat, inv_std, gamma)


def layernorm_rows_backward(cache: LayerNormCache, dy):
    """Backward of layernorm_rows. Returns (dx, dgamma, dbeta)."""
    dy = as_matrix(dy)
    _same_shape("layernorm_rows_backward", cache.xhat, dy)
    return kernels.layernorm_bwd_kernel(
        cache.xhat, cache.inv_std, cache.gamma, dy
    )
