"""Transformer encoder blocks with hand-written gradients.

A block maps a (p, d) feature matrix Z through single-layer attention
and a two-layer MLP. The math is written for the row-vector
convention (each row of Z is one patch token):

    minimal variant (the shape every equivalence proof is stated for):
        Q = Z Wq^T   K = Z Wk^T   V = Z Wv^T
        S = rowsoftmax(Q K^T / sqrt(dh))      A  = S V
        A1 = A W1^T   H = act(A1)             A2 = H W2^T

    full variant adds pre-norm, biases, and residuals:
        N1 = LN(Z) ... attention ... Z1 = Z + A
        N2 = LN(Z1) ... MLP ...       out = Z1 + A2

Every backward formula here is validated against central finite
differences, and the whole module satisfies the permutation
equivalence law: conjugating all square weights with a column
permutation (and permuting every bias/affine vector) commutes with
row/column shuffles of the input.

Multi-head attention splits Q/K/V into column blocks and is only
legal without column shuffling; slicing fixed column ranges does not
commute with a column permutation. dh is the per-head width.
"""

import struct
from dataclasses import dataclass, fields
from typing import Optional

import numpy as np

from .errors import ConfigError, ContractError, DecodeError, ShapeError
from .permutation import Permutation, conjugate_weight, permute_rowvector
from .tensor import (
    activation_pair,
    as_matrix,
    colsum,
    layernorm_rows,
    layernorm_rows_backward,
    matmul,
    softmax_rows,
    softmax_rows_backward,
)

STACK_FILE_VERSION = 1

_SQUARE_NAMES = ("w_q", "w_k", "w_v", "w_1", "w_2")
_VECTOR_NAMES = (
    "b_q", "b_k", "b_v", "b_1", "b_2",
    "gamma1", "beta1", "gamma2", "beta2",
)


@dataclass
class EncoderBlockWeights:
    """Weights of one block. Vector fields are None in the minimal variant."""

    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray
    w_1: np.ndarray
    w_2: np.ndarray
    b_q: Optional[np.ndarray] = None
    b_k: Optional[np.ndarray] = None
    b_v: Optional[np.ndarray] = None
    b_1: Optional[np.ndarray] = None
    b_2: Optional[np.ndarray] = None
    gamma1: Optional[np.ndarray] = None
    beta1: Optional[np.ndarray] = None
    gamma2: Optional[np.ndarray] = None
    beta2: Optional[np.ndarray] = None

    def __post_init__(self):
        d = self.w_q.shape[0] if self.w_q.ndim == 2 else -1
        for name in _SQUARE_NAMES:
            w = as_matrix(getattr(self, name))
            if w.shape != (d, d):
                raise ShapeError(f"{name}: expected ({d}, {d}), got {w.shape}")
            setattr(self, name, w)
        vecs = [getattr(self, n) for n in _VECTOR_NAMES]
        have = [v is not None for v in vecs]
        if any(have) and not all(have):
            raise ContractError(
                "block weights must carry all vector fields or none "
                "(minimal vs full variant)"
            )
        for name in _VECTOR_NAMES:
            v = getattr(self, name)
            if v is None:
                continue
            v = np.ascontiguousarray(v, dtype=np.float64)
            if v.shape != (d,):
                raise ShapeError(f"{name}: expected ({d},), got {v.shape}")
            if not np.isfinite(v).all():
                raise ContractError(f"{name}: non-finite entries")
            setattr(self, name, v)

    @property
    def d(self) -> int:
        return self.w_q.shape[0]

    @property
    def variant(self) -> str:
        return "full" if self.gamma1 is not None else "minimal"

    def copy(self) -> "EncoderBlockWeights":
        kw = {}
        for f in fields(self):
            v = getattr(self, f.name)
            kw[f.name] = None if v is None else v.copy()
        return EncoderBlockWeights(**kw)


@dataclass
class EncoderActivations:
    """Forward-pass cache for one block.

    `s` has shape (p, p) for single-head attention and (n_heads, p, p)
    otherwise. Fields after `a2` only exist for the full variant.
    """

    z: np.ndarray
    q: np.ndarray
    k: np.ndarray
    v: np.ndarray
    s: np.ndarray
    a: np.ndarray
    a1: np.ndarray
    h: np.ndarray
    a2: np.ndarray
    n1: Optional[np.ndarray] = None
    z1: Optional[np.ndarray] = None
    n2: Optional[np.ndarray] = None
    ln1: object = None
    ln2: object = None
    out: np.ndarray = None


@dataclass
class EncoderGradients:
    """Gradients for one block plus the gradient wrt the block input."""

    d_w_q: np.ndarray
    d_w_k: np.ndarray
    d_w_v: np.ndarray
    d_w_1: np.ndarray
    d_w_2: np.ndarray
    d_z: np.ndarray
    d_b_q: Optional[np.ndarray] = None
    d_b_k: Optional[np.ndarray] = None
    d_b_v: Optional[np.ndarray] = None
    d_b_1: Optional[np.ndarray] = None
    d_b_2: Optional[np.ndarray] = None
    d_gamma1: Optional[np.ndarray] = None
    d_beta1: Optional[np.ndarray] = None
    d_gamma2: Optional[np.ndarray] = None
    d_beta2: Optional[np.ndarray] = None


def _check_heads(d: int, n_heads: int) -> int:
    if n_heads < 1:
        raise ConfigError(f"n_heads must be >= 1, got {n_heads}")
    if d % n_heads != 0:
        raise ConfigError(f"n_heads={n_heads} must divide width d={d}")
    return d // n_heads


def _affine(x: np.ndarray, w: np.ndarray, b: Optional[np.ndarray]) -> np.ndarray:
    y = matmul(x, np.ascontiguousarray(w.T))
    return y if b is None else y + b


def _attention_forward(q, k, v, n_heads):
    """Per-head scaled attention. Returns (s, a)."""
    p, d = q.shape
    dh = _check_heads(d, n_heads)
    inv_scale = 1.0 / np.sqrt(dh)
    if n_heads == 1:
        s = softmax_rows(matmul(q, np.ascontiguousarray(k.T)) * inv_scale)
        return s, matmul(s, v)
    s = np.empty((n_heads, p, p), dtype=np.float64)
    a = np.empty((p, d), dtype=np.float64)
    for hd in range(n_heads):
        lo, hi = hd * dh, (hd + 1) * dh
        qh = np.ascontiguousarray(q[:, lo:hi])
        kh = np.ascontiguousarray(k[:, lo:hi])
        sh = softmax_rows(matmul(qh, np.ascontiguousarray(kh.T)) * inv_scale)
        s[hd] = sh
        a[:, lo:hi] = matmul(sh, np.ascontiguousarray(v[:, lo:hi]))
    return s, a


def _attention_backward(acts_s, q, k, v, d_a, n_heads):
    """Backward of _attention_forward. Returns (d_q, d_k, d_v)."""
    p, d = q.shape
    dh = _check_heads(d, n_heads)
    inv_scale = 1.0 / np.sqrt(dh)
    if n_heads == 1:
        d_s = matmul(d_a, np.ascontiguousarray(v.T))
        d_v = matmul(np.ascontiguousarray(acts_s.T), d_a)
        d_logits = softmax_rows_backward(acts_s, d_s) * inv_scale
        d_q = matmul(d_logits, k)
        d_k = matmul(np.ascontiguousarray(d_logits.T), q)
        return d_q, d_k, d_v
    d_q = np.empty_like(q)
    d_k = np.empty_like(k)
    d_v = np.empty_like(v)
    for hd in range(n_heads):
        lo, hi = hd * dh, (hd + 1) * dh
        sh = np.ascontiguousarray(acts_s[hd])
        dah = np.ascontiguousarray(d_a[:, lo:hi])
        vh = np.ascontiguousarray(v[:, lo:hi])
        d_s = matmul(dah, np.ascontiguousarray(vh.T))
        d_v[:, lo:hi] = matmul(np.ascontiguousarray(sh.T), dah)
        d_logits = softmax_rows_backward(sh, d_s) * inv_scale
        d_q[:, lo:hi] = matmul(d_logits, np.ascontiguousarray(k[:, lo:hi]))
        d_k[:, lo:hi] = matmul(
            np.ascontiguousarray(d_logits.T), np.ascontiguousarray(q[:, lo:hi])
        )
    return d_q, d_k, d_v


def teb_forward(
    w: EncoderBlockWeights,
    z,
    activation: str = "relu",
    n_heads: int = 1,
) -> tuple[np.ndarray, EncoderActivations]:
    """Run one block. Returns (output, activations cache)."""
    act, _ = activation_pair(activation)
    z = as_matrix(z)
    if z.shape[1] != w.d:
        raise ShapeError(f"teb_forward: input width {z.shape[1]} != weight width {w.d}")
    if w.variant == "minimal":
        q = _affine(z, w.w_q, None)
        k = _affine(z, w.w_k, None)
        v = _affine(z, w.w_v, None)
        s, a = _attention_forward(q, k, v, n_heads)
        a1 = _affine(a, w.w_1, None)
        h = act(a1)
        a2 = _affine(h, w.w_2, None)
        return a2, EncoderActivations(
            z=z, q=q, k=k, v=v, s=s, a=a, a1=a1, h=h, a2=a2, out=a2
        )
    n1, ln1 = layernorm_rows(z, w.gamma1, w.beta1)
    q = _affine(n1, w.w_q, w.b_q)
    k = _affine(n1, w.w_k, w.b_k)
    v = _affine(n1, w.w_v, w.b_v)
    s, a = _attention_forward(q, k, v, n_heads)
    z1 = z + a
    n2, ln2 = layernorm_rows(z1, w.gamma2, w.beta2)
    a1 = _affine(n2, w.w_1, w.b_1)
    h = act(a1)
    a2 = _affine(h, w.w_2, w.b_2)
    out = z1 + a2
    return out, EncoderActivations(
        z=z, q=q, k=k, v=v, s=s, a=a, a1=a1, h=h, a2=a2,
        n1=n1, z1=z1, n2=n2, ln1=ln1, ln2=ln2, out=out,
    )


def teb_backward(
    w: EncoderBlockWeights,
    acts: EncoderActivations,
    upstream,
    activation: str = "relu",
    n_heads: int = 1,
) -> EncoderGradients:
    """Gradients of one block for upstream dl/d(output).

    The attention-input gradient sums the Q, K and V paths. For the
    full variant the residual and norm paths are included and the
    bias/affine gradients are populated.
    """
    _, act_grad = activation_pair(activation)
    g = as_matrix(upstream)
    if g.shape != acts.out.shape:
        raise ShapeError(
            f"teb_backward: upstream shape {g.shape} != output shape {acts.out.shape}"
        )
    if w.variant == "minimal":
        d_h = matmul(g, w.w_2)
        d_w_2 = matmul(np.ascontiguousarray(g.T), acts.h)
        d_a1 = d_h * act_grad(acts.a1)
        d_a = matmul(d_a1, w.w_1)
        d_w_1 = matmul(np.ascontiguousarray(d_a1.T), acts.a)
        d_q, d_k, d_v = _attention_backward(
            acts.s, acts.q, acts.k, acts.v, d_a, n_heads
        )
        d_z = matmul(d_v, w.w_v) + matmul(d_q, w.w_q) + matmul(d_k, w.w_k)
        return EncoderGradients(
            d_w_q=matmul(np.ascontiguousarray(d_q.T), acts.z),
            d_w_k=matmul(np.ascontiguousarray(d_k.T), acts.z),
            d_w_v=matmul(np.ascontiguousarray(d_v.T), acts.z),
            d_w_1=d_w_1,
            d_w_2=d_w_2,
            d_z=d_z,
        )
    # full variant: out = z1 + a2, z1 = z + a
    d_a2 = g
    d_b_2 = colsum(d_a2)
    d_h = matmul(d_a2, w.w_2)
    d_w_2 = matmul(np.ascontiguousarray(d_a2.T), acts.h)
    d_a1 = d_h * act_grad(acts.a1)
    d_b_1 = colsum(d_a1)
    d_w_1 = matmul(np.ascontiguousarray(d_a1.T), acts.n2)
    d_n2 = matmul(d_a1, w.w_1)
    d_z1_ln, d_gamma2, d_beta2 = layernorm_rows_backward(acts.ln2, d_n2)
    d_z1 = g + d_z1_ln
    d_a = d_z1
    d_q, d_k, d_v = _attention_backward(acts.s, acts.q, acts.k, acts.v, d_a, n_heads)
    d_b_q = colsum(d_q)
    d_b_k = colsum(d_k)
    d_b_v = colsum(d_v)
    n1t = np.ascontiguousarray(acts.n1)
    d_w_q = matmul(np.ascontiguousarray(d_q.T), n1t)
    d_w_k = matmul(np.ascontiguousarray(d_k.T), n1t)
    d_w_v = matmul(np.ascontiguousarray(d_v.T), n1t)
    d_n1 = matmul(d_v, w.w_v) + matmul(d_q, w.w_q) + matmul(d_k, w.w_k)
    d_z_ln, d_gamma1, d_beta1 = layernorm_rows_backward(acts.ln1, d_n1)
    d_z = d_z1 + d_z_ln
    return EncoderGradients(
        d_w_q=d_w_q, d_w_k=d_w_k, d_w_v=d_w_v, d_w_1=d_w_1, d_w_2=d_w_2,
        d_z=d_z,
        d_b_q=d_b_q, d_b_k=d_b_k, d_b_v=d_b_v, d_b_1=d_b_1, d_b_2=d_b_2,
        d_gamma1=d_gamma1, d_beta1=d_beta1, d_gamma2=d_gamma2, d_beta2=d_beta2,
    )


def stack_forward(
    blocks: list[EncoderBlockWeights],
    z,
    activation: str = "relu",
    n_heads: int = 1,
):
    """Run the block stack. Returns (output, per-block activations)."""
    acts = []
    cur = as_matrix(z)
    for w in blocks:
        cur, a = teb_forward(w, cur, activation=activation, n_heads=n_heads)
        acts.append(a)
    return cur, acts


def stack_backward(
    blocks: list[EncoderBlockWeights],
    acts: list[EncoderActivations],
    upstream,
    activation: str = "relu",
    n_heads: int = 1,
):
    """Backward through the stack. Returns (per-block grads, dl/d(input))."""
    if len(blocks) != len(acts):
        raise ContractError("stack_backward: blocks and activations differ in length")
    grads: list[Optional[EncoderGradients]] = [None] * len(blocks)
    g = as_matrix(upstream)
    for i in range(len(blocks) - 1, -1, -1):
        gi = teb_backward(blocks[i], acts[i], g, activation=activation, n_heads=n_heads)
        grads[i] = gi
        g = gi.d_z
    return grads, g


def init_blocks(
    n_layers: int,
    d: int,
    rng: np.random.Generator,
    variant: str = "minimal",
    c: float = 2.0,
) -> list[EncoderBlockWeights]:
    """Random init: entries uniform in [-c/sqrt(d), c/sqrt(d)].

    A uniform(-c/sqrt(d), c/sqrt(d)) matmul scales variance by c^2/3,
    so c near 2 keeps activations O(1) through relu blocks instead of
    shrinking them to nothing. Full-variant norm scales start near 1
    and shifts near 0 so early training is stable; biases use the
    same bound as the weights.
    """
    if n_layers < 1:
        raise ConfigError(f"n_layers must be >= 1, got {n_layers}")
    if variant not in ("minimal", "full"):
        raise ConfigError(f"teb_variant must be 'minimal' or 'full', got {variant!r}")
    bound = c / np.sqrt(d)
    blocks = []
    for _ in range(n_layers):
        kw = {
            name: rng.uniform(-bound, bound, (d, d)) for name in _SQUARE_NAMES
        }
        if variant == "full":
            for name in ("b_q", "b_k", "b_v", "b_1", "b_2"):
                kw[name] = rng.uniform(-bound, bound, d)
            kw["gamma1"] = 1.0 + rng.uniform(-0.05, 0.05, d)
            kw["beta1"] = rng.uniform(-0.05, 0.05, d)
            kw["gamma2"] = 1.0 + rng.uniform(-0.05, 0.05, d)
            kw["beta2"] = rng.uniform(-0.05, 0.05, d)
        blocks.append(EncoderBlockWeights(**kw))
    return blocks


def conjugate_block(w: EncoderBlockWeights, p_col: Permutation) -> EncoderBlockWeights:
    """Conjugate every square weight and permute every vector field."""
    if p_col.n != w.d:
        raise ContractError(
            f"conjugate_block: permutation size {p_col.n} != width {w.d}"
        )
    kw = {name: conjugate_weight(getattr(w, name), p_col) for name in _SQUARE_NAMES}
    for name in _VECTOR_NAMES:
        v = getattr(w, name)
        kw[name] = None if v is None else permute_rowvector(v, p_col)
    return EncoderBlockWeights(**kw)


def conjugate_stack(
    blocks: list[EncoderBlockWeights], p_col: Permutation
) -> list[EncoderBlockWeights]:
    return [conjugate_block(w, p_col) for w in blocks]


# weight persistence: version byte, u32 block count, then per block a
# u8 entry count and entries of (u8 role, u32 rows, u32 cols, f64 data).

_ROLE_BY_NAME = {}
for _i, _n in enumerate(_SQUARE_NAMES):
    _ROLE_BY_NAME[_n] = _i + 1
for _i, _n in enumerate(_VECTOR_NAMES):
    _ROLE_BY_NAME[_n] = _i + 6
_NAME_BY_ROLE = {v: k for k, v in _ROLE_BY_NAME.items()}


def save_stack(path: str, blocks: list[EncoderBlockWeights]) -> None:
    """Write the stack to a single binary container."""
    parts = [struct.pack("<BI", STACK_FILE_VERSION, len(blocks))]
    for w in blocks:
        entries = []
        for name in _SQUARE_NAMES + _VECTOR_NAMES:
            v = getattr(w, name)
            if v is None:
                continue
            mat = v if v.ndim == 2 else v[None, :]
            entries.append(
                struct.pack("<BII", _ROLE_BY_NAME[name], mat.shape[0], mat.shape[1])
                + np.ascontiguousarray(mat, dtype="<f8").tobytes()
            )
        parts.append(struct.pack("<B", len(entries)))
        parts.extend(entries)
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


def load_stack(path: str) -> list[EncoderBlockWeights]:
    """Read a stack container written by save_stack."""
    with open(path, "rb") as fh:
        buf = fh.read()
    off = 0

    def need(n: int, what: str):
        nonlocal off
        if off + n > len(buf):
            raise DecodeError(f"stack file truncated reading {what}", off)
        piece = buf[off : off + n]
        off += n
        return piece

    version, n_blocks = struct.unpack("<BI", need(5, "header"))
    if version != STACK_FILE_VERSION:
        raise DecodeError(f"unsupported stack file version {version}", 0)
    blocks = []
    for _ in range(n_blocks):
        (n_entries,) = struct.unpack("<B", need(1, "entry count"))
        kw = {}
        for _ in range(n_entries):
            at = off
            role, rows, cols = struct.unpack("<BII", need(9, "entry header"))
            if role not in _NAME_BY_ROLE:
                raise DecodeError(f"unknown weight role tag {role}", at)
            name = _NAME_BY_ROLE[role]
            data = np.frombuffer(
                need(rows * cols * 8, f"{name} data"), dtype="<f8"
            ).reshape(rows, cols)
            if name in _SQUARE_NAMES:
                kw[name] = data.astype(np.float64)
            else:
                if rows != 1:
                    raise DecodeError(f"{name}: vector entry must have 1 row", at)
                kw[name] = data[0].astype(np.float64)
        missing = [n for n in _SQUARE_NAMES if n not in kw]
        if missing:
            raise DecodeError(f"block missing required weights {missing}", off)
        blocks.append(EncoderBlockWeights(**kw))
    if off != len(buf):
        raise DecodeError("trailing bytes after final block", off)
    return blocks
