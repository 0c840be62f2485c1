"""Closed-form multiply-accumulate counts for the edge/cloud split.

Counts describe one inference forward pass of the implemented layers.
Convention: a matmul of (m, k) by (k, n) costs m*k*n MACs; bias adds,
residual adds, scales, activations and softmax/norm element passes
are counted per element under "elementwise"; permutation shuffles are
index gathers and cost zero arithmetic.

The matmul numbers are exact and are verified in the tests by
instrumenting the real forward pass; the elementwise numbers are the
documented per-element passes of each op.
"""

from .config import ModelConfig


def edge_macc(m: ModelConfig) -> dict:
    """F1 + F3 arithmetic on the edge, one sample."""
    embed_matmul = m.p * m.patch_dim * m.d
    embed_elem = m.p * m.d  # bias add
    if m.position_embedding:
        embed_elem += m.p * m.d
    head_elem = m.p * m.d  # mean pool adds
    head_matmul = m.d * m.n_classes
    head_elem += m.n_classes  # bias add
    total = embed_matmul + embed_elem + head_matmul + head_elem
    return {
        "matmul_macc": embed_matmul + head_matmul,
        "elementwise": embed_elem + head_elem,
        "shuffle_macc": 0,
        "total": total,
    }


def block_macc(m: ModelConfig) -> dict:
    """One encoder block, one sample of p tokens of width d."""
    p, d = m.p, m.d
    attn_matmul = 3 * p * d * d  # Q, K, V projections
    attn_matmul += p * p * d  # Q K^T (summed over heads)
    attn_matmul += p * p * d  # S V
    softmax_elem = 4 * p * p  # scale, exp, row sum, divide
    mlp_matmul = 2 * p * d * d
    act_elem = p * d
    elem = softmax_elem + act_elem
    if m.teb_variant == "full":
        elem += 2 * 6 * p * d  # two norms: mean, var, center, scale, affine
        elem += 2 * p * d  # residual adds
        elem += 5 * p * d  # five bias adds
    total = attn_matmul + mlp_matmul + elem
    return {
        "matmul_macc": attn_matmul + mlp_matmul,
        "elementwise": elem,
        "total": total,
    }


def cloud_macc(m: ModelConfig) -> dict:
    """Whole cloud stack, one sample."""
    per = block_macc(m)
    return {
        "matmul_macc": m.n_layers * per["matmul_macc"],
        "elementwise": m.n_layers * per["elementwise"],
        "per_block": per,
        "total": m.n_layers * per["total"],
    }


def split_summary(m: ModelConfig) -> dict:
    e = edge_macc(m)
    c = cloud_macc(m)
    return {
        "edge": e,
        "cloud": c,
        "cloud_to_edge_ratio": c["total"] / e["total"],
    }
