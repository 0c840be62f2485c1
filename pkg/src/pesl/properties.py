"""Named numeric properties behind the `verify` command.

Every core law of the package is expressed as a named, seeded,
self-contained check that reports its worst observed error against a
stated threshold. `run_properties` executes a selection and returns
structured results the CLI renders as text or JSON.

The `corrupt` hook deliberately breaks one law (currently
'conjugation') so operators can see what a red property looks like;
it is also how the tests prove the suite can fail.
"""

import math
import zlib
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy import stats

from . import wire
from .config import ModelConfig, RunConfig, TrainConfig
from .data import make_blobs
from .edge import cross_entropy, init_edge, patch_embed
from .encoder import (
    conjugate_stack,
    init_blocks,
    stack_backward,
    stack_forward,
    teb_backward,
    teb_forward,
)
from .errors import ConfigError, DecodeError
from .permutation import (
    apply_cols_inv,
    apply_rows,
    inverse,
    log2_perm_space,
    permute_rowvector,
    sample,
    to_matrix,
)
from .runtime import (
    cutmix,
    run_training,
    shuffle_feature,
    unshuffle_output,
)
from .tensor import (
    hadamard,
    layernorm_rows,
    layernorm_rows_backward,
    matmul,
    relu,
    softmax_rows,
    softmax_rows_backward,
)


@dataclass
class PropertyResult:
    name: str
    passed: bool
    max_err: float
    threshold: float
    detail: str = ""

    def as_dict(self) -> dict:
        return {
            "name": self.name,
            "passed": self.passed,
            "max_err": self.max_err,
            "threshold": self.threshold,
            "detail": self.detail,
        }


def _rel_err(got: np.ndarray, want: np.ndarray) -> float:
    got = np.asarray(got, dtype=np.float64)
    want = np.asarray(want, dtype=np.float64)
    denom = max(float(np.max(np.abs(want))), 1e-12)
    return float(np.max(np.abs(got - want))) / denom


def _abs_err(got, want) -> float:
    return float(np.max(np.abs(np.asarray(got) - np.asarray(want))))


def _fd_scalar(f: Callable[[], float], ref: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Central finite differences of f() wrt the array `ref` in place."""
    g = np.zeros_like(ref)
    it = np.nditer(ref, flags=["multi_index"])
    while not it.finished:
        idx = it.multi_index
        keep = ref[idx]
        ref[idx] = keep + h
        hi = f()
        ref[idx] = keep - h
        lo = f()
        ref[idx] = keep
        g[idx] = (hi - lo) / (2.0 * h)
        it.iternext()
    return g


def _rand_pd(rng) -> tuple[int, int]:
    return int(rng.integers(2, 9)), int(rng.integers(2, 9))


def _shuffled(z, p_row, p_col):
    return shuffle_feature(z, p_row, p_col)


def prop_matmul_oracle(rng, trials: int, corrupt: Optional[str]) -> PropertyResult:
    """matmul equals a sorted-accumulation triple loop bit for bit.

    The reference sums each entry's products smallest first, the
    package's canonical order; the check also permutes the operands
    and demands the permuted product be an exact gather of the plain
    one, which plain left-to-right accumulation does not satisfy.
    """
    worst = 0.0
    for _ in range(trials):
        m, k, n = (int(rng.integers(1, 10)) for _ in range(3))
        a = rng.uniform(-3, 3, (m, k))
        b = rng.uniform(-3, 3, (k, n))
        ref = np.zeros((m, n))
        for i in range(m):
            for j in range(n):
                terms = sorted(a[i, kk] * b[kk, j] for kk in range(k))
                acc = 0.0
                for t in terms:
                    acc += t
                ref[i, j] = acc
        got = matmul(a, b)
        worst = max(worst, _abs_err(got, ref))
        pr = sample(m, rng)
        mixed = matmul(apply_rows(a, pr), b)
        worst = max(worst, _abs_err(mixed, apply_rows(got, pr)))
    return PropertyResult("matmul_oracle", worst == 0.0, worst, 0.0)


def prop_elementwise_commute(rng, trials: int, corrupt) -> PropertyResult:
    """relu and hadamard commute with shuffling, bit for bit."""
    worst = 0.0
    for _ in range(trials):
        p, d = _rand_pd(rng)
        z = rng.uniform(-2, 2, (p, d))
        w = rng.uniform(-2, 2, (p, d))
        pr, pc = sample(p, rng), sample(d, rng)
        worst = max(worst, _abs_err(relu(_shuffled(z, pr, pc)), _shuffled(relu(z), pr, pc)))
        worst = max(
            worst,
            _abs_err(
                hadamard(_shuffled(z, pr, pc), _shuffled(w, pr, pc)),
                _shuffled(hadamard(z, w), pr, pc),
            ),
        )
    return PropertyResult("elementwise_commute", worst == 0.0, worst, 0.0)


def prop_softmax_equivariance(rng, trials: int, corrupt) -> PropertyResult:
    """Row softmax commutes with row and column shuffles."""
    worst = 0.0
    for _ in range(trials):
        p, d = _rand_pd(rng)
        z = rng.uniform(-4, 4, (p, d))
        pr, pc = sample(p, rng), sample(d, rng)
        worst = max(
            worst,
            _abs_err(softmax_rows(_shuffled(z, pr, pc)), _shuffled(softmax_rows(z), pr, pc)),
        )
    return PropertyResult("softmax_equivariance", worst < 1e-12, worst, 1e-12)


def prop_layernorm_equivariance(rng, trials: int, corrupt) -> PropertyResult:
    """Row layernorm with permuted affines commutes with shuffles."""
    worst = 0.0
    for _ in range(trials):
        p, d = _rand_pd(rng)
        z = rng.uniform(-2, 2, (p, d))
        gamma = 1.0 + rng.uniform(-0.3, 0.3, d)
        beta = rng.uniform(-0.3, 0.3, d)
        pr, pc = sample(p, rng), sample(d, rng)
        lhs, _ = layernorm_rows(
            _shuffled(z, pr, pc),
            permute_rowvector(gamma, pc),
            permute_rowvector(beta, pc),
        )
        base, _ = layernorm_rows(z, gamma, beta)
        worst = max(worst, _abs_err(lhs, _shuffled(base, pr, pc)))
    return PropertyResult("layernorm_equivariance", worst < 1e-12, worst, 1e-12)


def prop_linear_conjugation(rng, trials: int, corrupt) -> PropertyResult:
    """Affine layers: conjugated weights on shuffled input give shuffled output."""
    worst = 0.0
    for _ in range(trials):
        p, d = _rand_pd(rng)
        z = rng.uniform(-2, 2, (p, d))
        w = rng.uniform(-2, 2, (d, d))
        b = rng.uniform(-2, 2, d)
        pr, pc = sample(p, rng), sample(d, rng)
        w_c = w[np.ix_(pc.indices, pc.indices)]
        lhs = matmul(_shuffled(z, pr, pc), np.ascontiguousarray(w_c.T)) + permute_rowvector(b, pc)
        rhs = _shuffled(matmul(z, np.ascontiguousarray(w.T)) + b, pr, pc)
        worst = max(worst, _abs_err(lhs, rhs))
    return PropertyResult("linear_conjugation", worst < 1e-12, worst, 1e-12)


def prop_tensor_backward_fd(rng, trials: int, corrupt) -> PropertyResult:
    """softmax and layernorm backward agree with finite differences."""
    worst = 0.0
    for _ in range(max(3, trials // 4)):
        p, d = _rand_pd(rng)
        x = rng.uniform(-2, 2, (p, d))
        g = rng.uniform(-1, 1, (p, d))
        analytic = softmax_rows_backward(softmax_rows(x), g)
        fd = _fd_scalar(lambda: float((softmax_rows(x) * g).sum()), x)
        worst = max(worst, _rel_err(analytic, fd))
        gamma = 1.0 + rng.uniform(-0.2, 0.2, d)
        beta = rng.uniform(-0.2, 0.2, d)
        y, cache = layernorm_rows(x, gamma, beta)
        dx, dgam, dbet = layernorm_rows_backward(cache, g)

        def ln_loss():
            out, _ = layernorm_rows(x, gamma, beta)
            return float((out * g).sum())

        worst = max(worst, _rel_err(dx, _fd_scalar(ln_loss, x)))
        worst = max(worst, _rel_err(dgam, _fd_scalar(ln_loss, gamma)))
        worst = max(worst, _rel_err(dbet, _fd_scalar(ln_loss, beta)))
    return PropertyResult("tensor_backward_fd", worst < 1e-5, worst, 1e-5)


def _rand_stack(rng, d, n_layers, variant):
    return init_blocks(n_layers, d, rng, variant=variant)


def prop_encoder_forward_equivalence(rng, trials: int, corrupt) -> PropertyResult:
    """Conjugated stacks map shuffled input to shuffled output (1e-9)."""
    worst = 0.0
    for t in range(trials):
        p, d = _rand_pd(rng)
        layers = int(rng.integers(1, 4))
        variant = "full" if t % 3 == 0 else "minimal"
        blocks = _rand_stack(rng, d, layers, variant)
        z = rng.uniform(-1, 1, (p, d))
        pr, pc = sample(p, rng), sample(d, rng)
        out, _ = stack_forward(blocks, z)
        out_s, _ = stack_forward(conjugate_stack(blocks, pc), _shuffled(z, pr, pc))
        worst = max(worst, _abs_err(out_s, _shuffled(out, pr, pc)))
    return PropertyResult("encoder_forward_equivalence", worst < 1e-9, worst, 1e-9)


def prop_encoder_backward_fd(rng, trials: int, corrupt) -> PropertyResult:
    """Every encoder gradient agrees with central finite differences."""
    worst = 0.0
    for t in range(max(2, trials // 8)):
        p, d = int(rng.integers(2, 5)), int(rng.integers(2, 6))
        variant = "full" if t % 2 else "minimal"
        blocks = _rand_stack(rng, d, 1, variant)
        w = blocks[0]
        z = rng.uniform(-1, 1, (p, d))
        g = rng.uniform(-1, 1, (p, d))

        def loss():
            out, _ = teb_forward(w, z)
            return float((out * g).sum())

        _, acts = teb_forward(w, z)
        grads = teb_backward(w, acts, g)
        pairs = [("d_z", z), ("d_w_q", w.w_q), ("d_w_k", w.w_k),
                 ("d_w_v", w.w_v), ("d_w_1", w.w_1), ("d_w_2", w.w_2)]
        if variant == "full":
            pairs += [("d_b_q", w.b_q), ("d_b_1", w.b_1), ("d_gamma1", w.gamma1),
                      ("d_beta2", w.beta2)]
        for gname, ref in pairs:
            worst = max(worst, _rel_err(getattr(grads, gname), _fd_scalar(loss, ref)))
    return PropertyResult("encoder_backward_fd", worst < 1e-5, worst, 1e-5)


def prop_weight_gradient_conjugation(rng, trials: int, corrupt) -> PropertyResult:
    """Shuffled-run weight grads are the conjugates of plain-run grads."""
    worst = 0.0
    hook = corrupt == "conjugation"
    for t in range(trials):
        p, d = _rand_pd(rng)
        variant = "full" if t % 3 == 0 else "minimal"
        blocks = _rand_stack(rng, d, 1, variant)
        w = blocks[0]
        z = rng.uniform(-1, 1, (p, d))
        g = rng.uniform(-1, 1, (p, d))
        pr, pc = sample(p, rng), sample(d, rng)
        _, acts = teb_forward(w, z)
        plain = teb_backward(w, acts, g)
        w_c = conjugate_stack([w], pc)[0]
        if hook:
            w_c.w_q[0, 0] += 1e-3  # deliberate corruption hook
        _, acts_s = teb_forward(w_c, _shuffled(z, pr, pc))
        shuf = teb_backward(w_c, acts_s, _shuffled(g, pr, pc))
        for name in ("d_w_q", "d_w_k", "d_w_v", "d_w_1", "d_w_2"):
            want = getattr(plain, name)[np.ix_(pc.indices, pc.indices)]
            worst = max(worst, _abs_err(getattr(shuf, name), want))
        if variant == "full":
            for name in ("d_b_q", "d_b_k", "d_b_v", "d_b_1", "d_b_2",
                         "d_gamma1", "d_beta1", "d_gamma2", "d_beta2"):
                want = permute_rowvector(getattr(plain, name), pc)
                worst = max(worst, _abs_err(getattr(shuf, name), want))
    return PropertyResult("weight_gradient_conjugation", worst < 1e-9, worst, 1e-9)


def prop_feature_gradient_rule(rng, trials: int, corrupt) -> PropertyResult:
    """Input gradients transform like features: d_z' = R d_z C^-1."""
    worst = 0.0
    for _ in range(trials):
        p, d = _rand_pd(rng)
        blocks = _rand_stack(rng, d, 2, "minimal")
        z = rng.uniform(-1, 1, (p, d))
        g = rng.uniform(-1, 1, (p, d))
        pr, pc = sample(p, rng), sample(d, rng)
        _, acts = stack_forward(blocks, z)
        _, d_z = stack_backward(blocks, acts, g)
        shuffled_blocks = conjugate_stack(blocks, pc)
        _, acts_s = stack_forward(shuffled_blocks, _shuffled(z, pr, pc))
        _, d_z_s = stack_backward(shuffled_blocks, acts_s, _shuffled(g, pr, pc))
        worst = max(worst, _abs_err(d_z_s, _shuffled(d_z, pr, pc)))
    return PropertyResult("feature_gradient_rule", worst < 1e-9, worst, 1e-9)


def prop_row_shuffle_gradient_identity(rng, trials: int, corrupt) -> PropertyResult:
    """With identity column key the weight gradients match exactly (1e-12)."""
    worst = 0.0
    for _ in range(trials):
        p, d = _rand_pd(rng)
        blocks = _rand_stack(rng, d, 1, "minimal")
        w = blocks[0]
        z = rng.uniform(-1, 1, (p, d))
        g = rng.uniform(-1, 1, (p, d))
        pr = sample(p, rng)
        _, acts = teb_forward(w, z)
        plain = teb_backward(w, acts, g)
        _, acts_r = teb_forward(w, apply_rows(z, pr))
        shuf = teb_backward(w, acts_r, apply_rows(g, pr))
        for name in ("d_w_q", "d_w_k", "d_w_v", "d_w_1", "d_w_2"):
            worst = max(worst, _abs_err(getattr(shuf, name), getattr(plain, name)))
    return PropertyResult("row_shuffle_gradient_identity", worst < 1e-12, worst, 1e-12)


def prop_edge_parameter_equality(rng, trials: int, corrupt) -> PropertyResult:
    """dl/d(edge params) is untouched by shuffling (1e-12)."""
    from .edge import extract_patches, head_backward, head_forward, patch_embed_backward

    worst = 0.0
    for t in range(max(2, trials // 5)):
        d = 8
        edge = init_edge(
            4, 4, 1, 2, 2, d, 3, np.random.default_rng(int(rng.integers(2**32))),
            position_embedding=bool(t % 2),
        )
        blocks = _rand_stack(rng, d, 2, "minimal")
        img = rng.uniform(0, 1, (1, 4, 4))
        patches = extract_patches(img, 2, 2)
        z0 = patch_embed(edge, img)
        p = z0.shape[0]
        pr, pc = sample(p, rng), sample(d, rng)
        label = int(rng.integers(0, 3))

        def edge_grads(blks, p_row, p_col):
            send = z0 if p_row is None else shuffle_feature(z0, p_row, p_col)
            out, acts = stack_forward(blks, send)
            y = out if p_row is None else unshuffle_output(out, p_row, p_col)
            pooled, logits = head_forward(edge, y)
            _, d_logits = cross_entropy(logits, label)
            d_w_head, d_b_head, d_y = head_backward(edge, pooled, d_logits, p)
            g = d_y if p_row is None else shuffle_feature(d_y, p_row, p_col)
            _, d_zs = stack_backward(blks, acts, g)
            d_z0 = d_zs if p_row is None else unshuffle_output(d_zs, p_row, p_col)
            d_w_embed, d_b_embed, d_pos = patch_embed_backward(edge, patches, d_z0)
            grads = [d_w_head, d_b_head, d_w_embed, d_b_embed]
            if d_pos is not None:
                grads.append(d_pos)
            return grads

        plain = edge_grads(blocks, None, None)
        shuf = edge_grads(conjugate_stack(blocks, pc), pr, pc)
        for a, b in zip(plain, shuf):
            worst = max(worst, _abs_err(a, b))
    return PropertyResult("edge_parameter_equality", worst < 1e-12, worst, 1e-12)


def prop_shuffle_roundtrip(rng, trials: int, corrupt) -> PropertyResult:
    """unshuffle(shuffle(Z)) == Z bit for bit; same for conjugation."""
    worst = 0.0
    for _ in range(trials):
        p, d = _rand_pd(rng)
        z = rng.uniform(-5, 5, (p, d))
        pr, pc = sample(p, rng), sample(d, rng)
        worst = max(worst, _abs_err(unshuffle_output(shuffle_feature(z, pr, pc), pr, pc), z))
        w = rng.uniform(-5, 5, (d, d))
        w_c = w[np.ix_(pc.indices, pc.indices)]
        inv = inverse(pc)
        worst = max(worst, _abs_err(w_c[np.ix_(inv.indices, inv.indices)], w))
    return PropertyResult("shuffle_roundtrip", worst == 0.0, worst, 0.0)


def prop_permutation_algebra(rng, trials: int, corrupt) -> PropertyResult:
    """P P^T = I and the gather forms agree with the matrix forms."""
    worst = 0.0
    for _ in range(trials):
        n = int(rng.integers(1, 12))
        pm = sample(n, rng)
        mat = to_matrix(pm)
        worst = max(worst, _abs_err(mat @ mat.T, np.eye(n)))
        z = rng.uniform(-2, 2, (n, int(rng.integers(1, 6))))
        worst = max(worst, _abs_err(apply_rows(z, pm), mat @ z))
        zz = rng.uniform(-2, 2, (int(rng.integers(1, 6)), n))
        worst = max(worst, _abs_err(apply_cols_inv(zz, pm), zz @ mat.T))
        worst = max(worst, _abs_err(to_matrix(inverse(pm)), mat.T))
    return PropertyResult("permutation_algebra", worst == 0.0, worst, 0.0)


def prop_sampling_uniformity(rng, trials: int, corrupt) -> PropertyResult:
    """Fisher-Yates output is uniform over the 6 permutations of 3 items."""
    draws = 60000
    counts: dict = {}
    for _ in range(draws):
        pm = tuple(sample(3, rng).indices.tolist())
        counts[pm] = counts.get(pm, 0) + 1
    observed = [counts.get(pm, 0) for pm in sorted(counts)]
    if len(observed) != 6:
        return PropertyResult("sampling_uniformity", False, 0.0, 0.001,
                              f"only {len(observed)} of 6 permutations seen")
    _, pvalue = stats.chisquare(observed)
    return PropertyResult(
        "sampling_uniformity", bool(pvalue > 0.001), float(pvalue), 0.001,
        "threshold is a lower bound on the chi-square p-value",
    )


def prop_log2_space_bigint(rng, trials: int, corrupt) -> PropertyResult:
    """lgamma-based size of the keyspace matches exact big-int factorials."""
    worst = 0.0
    for p in range(1, 21):
        for d in range(1, 21):
            exact = math.log2(math.factorial(p)) + math.log2(math.factorial(d))
            got = log2_perm_space(p, d)
            denom = max(abs(exact), 1.0)
            worst = max(worst, abs(got - exact) / denom)
    return PropertyResult("log2_space_bigint", worst < 1e-9, worst, 1e-9)


def prop_cutmix_identity(rng, trials: int, corrupt) -> PropertyResult:
    """Mixed pixels come from exactly one parent; label mass is conserved."""
    from .data import Sample

    worst = 0.0
    for _ in range(trials):
        h, w = int(rng.integers(2, 9)), int(rng.integers(2, 9))
        batch = [
            Sample(image=rng.uniform(0, 1, (1, h, w)), label=int(rng.integers(0, 3)))
            for _ in range(4)
        ]
        mixed = cutmix(batch, rng, prob=1.0, n_classes=3)
        for ms in mixed:
            x0, y0, rw, rh = ms.rect
            inside = ms.image[:, y0 : y0 + rh, x0 : x0 + rw]
            donor = batch[ms.partner].image[:, y0 : y0 + rh, x0 : x0 + rw]
            worst = max(worst, _abs_err(inside, donor) if inside.size else 0.0)
            outside = ms.image.copy()
            outside[:, y0 : y0 + rh, x0 : x0 + rw] = batch[ms.source].image[
                :, y0 : y0 + rh, x0 : x0 + rw
            ]
            worst = max(worst, _abs_err(outside, batch[ms.source].image))
            worst = max(worst, abs(float(ms.soft_label.sum()) - 1.0))
            worst = max(worst, abs(ms.lam - (1.0 - rw * rh / (w * h))))
    return PropertyResult("cutmix_identity", worst < 1e-12, worst, 1e-12)


def prop_wire_roundtrip(rng, trials: int, corrupt) -> PropertyResult:
    """Frames and matrix payloads survive encode/decode bit for bit."""
    worst = 0.0
    ok = True
    for _ in range(trials):
        a = rng.uniform(-1e6, 1e6, (int(rng.integers(1, 20)), int(rng.integers(1, 20))))
        msg = wire.matrix_message(wire.Kind.FWD_REQ, a)
        back = wire.matrix_of(wire.decode_message(wire.encode_message(msg)))
        worst = max(worst, _abs_err(back, a))
    raw = wire.encode_message(wire.Message(wire.Kind.STEP))
    try:
        wire.decode_message(b"XXXX" + raw[4:])
        ok = False
    except DecodeError as e:
        ok = ok and e.offset == 0
    try:
        wire.decode_message(raw[:10])
        ok = False
    except DecodeError:
        pass
    return PropertyResult("wire_roundtrip", ok and worst == 0.0, worst, 0.0)


def prop_loss_equivalence_smoke(rng, trials: int, corrupt) -> PropertyResult:
    """Tiny three-mode dual run: per-step losses agree to 1e-10."""
    model = ModelConfig(
        image_h=4, image_w=4, channels=1, patch_h=2, patch_w=2,
        p=4, d=8, n_layers=2, n_classes=2,
    )
    data_rng = np.random.default_rng(123)
    ds = make_blobs(48, 4, 4, 1, 2, data_rng)
    runs = {}
    for mode in ("vanilla", "row_shuffle", "row_column_shuffle"):
        cfg = RunConfig(
            model=model,
            train=TrainConfig(
                mode=mode, lr=0.05, epochs=2, batch_size=8, seed=7,
                mixup_prob=0.25,
            ),
        )
        runs[mode] = run_training(cfg, ds)
    base = [r["loss"] for r in runs["vanilla"].step_records]
    worst = 0.0
    for mode in ("row_shuffle", "row_column_shuffle"):
        other = [r["loss"] for r in runs[mode].step_records]
        worst = max(worst, max(abs(a - b) for a, b in zip(base, other)))
    return PropertyResult("loss_equivalence_smoke", worst < 1e-10, worst, 1e-10)


PROPERTIES: dict[str, Callable] = {
    "matmul_oracle": prop_matmul_oracle,
    "elementwise_commute": prop_elementwise_commute,
    "softmax_equivariance": prop_softmax_equivariance,
    "layernorm_equivariance": prop_layernorm_equivariance,
    "linear_conjugation": prop_linear_conjugation,
    "tensor_backward_fd": prop_tensor_backward_fd,
    "encoder_forward_equivalence": prop_encoder_forward_equivalence,
    "encoder_backward_fd": prop_encoder_backward_fd,
    "weight_gradient_conjugation": prop_weight_gradient_conjugation,
    "feature_gradient_rule": prop_feature_gradient_rule,
    "row_shuffle_gradient_identity": prop_row_shuffle_gradient_identity,
    "edge_parameter_equality": prop_edge_parameter_equality,
    "shuffle_roundtrip": prop_shuffle_roundtrip,
    "permutation_algebra": prop_permutation_algebra,
    "sampling_uniformity": prop_sampling_uniformity,
    "log2_space_bigint": prop_log2_space_bigint,
    "cutmix_identity": prop_cutmix_identity,
    "wire_roundtrip": prop_wire_roundtrip,
    "loss_equivalence_smoke": prop_loss_equivalence_smoke,
}

CORRUPT_HOOKS = ("conjugation",)


def run_properties(
    only: Optional[list[str]] = None,
    corrupt: Optional[str] = None,
    trials: int = 25,
    seed: int = 2024,
) -> list[PropertyResult]:
    """Run the named properties (all by default) with a fixed seed."""
    names = list(PROPERTIES) if only is None else list(only)
    if corrupt is not None and corrupt not in CORRUPT_HOOKS:
        raise ConfigError(f"unknown corruption hook: {corrupt!r}")
    results = []
    for name in names:
        if name not in PROPERTIES:
            raise ConfigError(f"unknown property: {name!r}")
        rng = np.random.default_rng(np.random.SeedSequence([seed, zlib.crc32(name.encode())]))
        results.append(PROPERTIES[name](rng, trials, corrupt))
    return results
