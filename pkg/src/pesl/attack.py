"""Desk-scale inversion attackers against the edge feature.

Two attackers, both deliberately modest: the point is to measure how
much the shuffle costs an adversary, not to build a strong one.

Black box: the attacker has (feature, image) pairs from an auxiliary
set and fits a two-layer MLP decoder from flattened features back to
pixels; quality is held-out reconstruction MSE. Observations are
produced by the legitimate edge pipeline (the only place a key
appears); the attacker functions only ever receive feature arrays.

White box: the attacker has the F1 weights and one observed feature
and gradient-descends a guessed image so F1(guess) matches it. The
`naive` objective compares entry for entry; `greedy_row` re-matches
rows each iteration (cheap order-invariant surrogate, no optimal
assignment search) to show row shuffling alone is what the naive
objective trips over.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .config import RunConfig, stream_rng
from .data import Sample, make_blobs, make_order_dependent
from .edge import (
    EdgeWeights,
    init_edge,
    patch_embed,
    patch_embed_input_grad,
)
from .errors import ContractError, DomainError
from .permutation import Permutation, identity, sample as sample_perm
from .runtime import shuffle_feature
from .tensor import matmul

PROTECTIONS = ("none", "row", "row_column")


def mse(a: np.ndarray, b: np.ndarray) -> float:
    """Mean squared error over all entries of two same-shape arrays."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ContractError(f"mse: shapes differ, {a.shape} vs {b.shape}")
    diff = a - b
    return float(np.mean(diff * diff))


def psnr(a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; +inf for identical inputs."""
    err = mse(a, b)
    if err == 0.0:
        return float("inf")
    return float(10.0 * np.log10(peak * peak / err))


@dataclass
class DecoderWeights:
    """Two-layer MLP decoder: relu(x W1 + b1) W2 + b2."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray


def init_decoder(
    in_dim: int, hidden: int, out_dim: int, rng: np.random.Generator
) -> DecoderWeights:
    s1 = 1.0 / np.sqrt(in_dim)
    s2 = 1.0 / np.sqrt(hidden)
    return DecoderWeights(
        w1=rng.uniform(-s1, s1, (in_dim, hidden)),
        b1=rng.uniform(-s1, s1, hidden),
        w2=rng.uniform(-s2, s2, (hidden, out_dim)),
        b2=rng.uniform(-s2, s2, out_dim),
    )


def decoder_forward(dec: DecoderWeights, x: np.ndarray):
    """Returns (pre-activation, hidden, output) for one flat feature."""
    a1 = matmul(x[None, :], dec.w1)[0] + dec.b1
    h = np.maximum(a1, 0.0)
    out = matmul(h[None, :], dec.w2)[0] + dec.b2
    return a1, h, out


def _decoder_step(dec: DecoderWeights, x, target, lr: float) -> float:
    a1, h, out = decoder_forward(dec, x)
    resid = out - target
    loss = float(np.mean(resid * resid))
    d_out = 2.0 * resid / resid.size
    d_w2 = matmul(h[:, None], d_out[None, :])
    d_h = matmul(dec.w2, d_out[:, None])[:, 0]
    d_a1 = d_h * (a1 > 0.0)
    d_w1 = matmul(x[:, None], d_a1[None, :])
    dec.w2 -= lr * d_w2
    dec.b2 -= lr * d_out
    dec.w1 -= lr * d_w1
    dec.b1 -= lr * d_a1
    return loss


def train_blackbox(
    pairs: list[tuple[np.ndarray, np.ndarray]],
    hidden: int,
    epochs: int,
    lr: float,
    rng: np.random.Generator,
) -> DecoderWeights:
    """Fit the decoder on (flat feature, flat image) pairs with SGD."""
    if not pairs:
        raise DomainError("train_blackbox: empty training set")
    in_dim = pairs[0][0].size
    out_dim = pairs[0][1].size
    dec = init_decoder(in_dim, hidden, out_dim, rng)
    for _ in range(epochs):
        for x, t in pairs:
            _decoder_step(dec, x, t, lr)
    return dec


def decoder_mse(dec: DecoderWeights, pairs) -> float:
    """Mean reconstruction MSE of a decoder over (feature, image) pairs."""
    total = 0.0
    for x, t in pairs:
        _, _, out = decoder_forward(dec, x)
        total += mse(out, t)
    return total / len(pairs)


def observe_features(
    edge: EdgeWeights,
    samples: list[Sample],
    protection: str,
    e: int,
    rng: np.random.Generator,
    p_col: Optional[Permutation] = None,
) -> list[tuple[np.ndarray, np.ndarray]]:
    """Produce what an eavesdropper sees: e feature observations per image.

    This simulates the legitimate edge (it holds the key material);
    everything returned to the caller is observation-side only. Each
    observation draws a fresh row permutation, matching one sample
    leaving the device once per epoch.
    """
    if protection not in PROTECTIONS:
        raise DomainError(f"protection must be one of {PROTECTIONS}, got {protection!r}")
    if e < 1:
        raise DomainError(f"need at least one observation per sample, got e={e}")
    if protection == "row_column":
        if p_col is None:
            raise ContractError("row_column protection needs the model column key")
        col = p_col
    else:
        col = None
    out = []
    for s in samples:
        z0 = patch_embed(edge, s.image)
        p = z0.shape[0]
        views = []
        for _ in range(e):
            if protection == "none":
                views.append(z0.reshape(-1))
            else:
                p_row = sample_perm(p, rng)
                use_col = col if col is not None else identity(z0.shape[1])
                views.append(shuffle_feature(z0, p_row, use_col).reshape(-1))
        out.append((np.concatenate(views), s.image.reshape(-1)))
    return out


def _greedy_row_match(z: np.ndarray, obs: np.ndarray) -> np.ndarray:
    """Reorder obs rows to greedily match z rows (no optimal search).

    Repeatedly pairs the globally closest (z row, obs row) among the
    still-unmatched ones; returns obs permuted so row i targets z row i.
    """
    p = z.shape[0]
    cost = np.empty((p, p))
    for i in range(p):
        diff = obs - z[i]
        cost[i] = (diff * diff).sum(axis=1)
    target = np.empty_like(obs)
    work = cost.copy()
    for _ in range(p):
        i, j = np.unravel_index(np.argmin(work), work.shape)
        target[i] = obs[j]
        work[i, :] = np.inf
        work[:, j] = np.inf
    return target


@dataclass
class InvertResult:
    image: np.ndarray
    objective: list[float]  # per-iteration objective values


def whitebox_invert(
    edge: EdgeWeights,
    observed: np.ndarray,
    channels: int,
    image_h: int,
    image_w: int,
    objective: str = "naive",
    iters: int = 300,
    lr: float = 1.0,
    rng: Optional[np.random.Generator] = None,
    init: Optional[np.ndarray] = None,
) -> InvertResult:
    """Gradient-descend a guessed image so F1(guess) matches `observed`.

    objective 'naive' compares features entry for entry; 'greedy_row'
    re-matches observation rows to guess rows each iteration. The
    guess is clipped to [0, 1] after every step.
    """
    if objective not in ("naive", "greedy_row"):
        raise DomainError(f"unknown objective {objective!r}")
    if rng is None:
        rng = np.random.default_rng(0)
    guess = (
        init.copy()
        if init is not None
        else rng.uniform(0.25, 0.75, (channels, image_h, image_w))
    )
    curve = []
    for _ in range(iters):
        z = patch_embed(edge, guess)
        target = observed if objective == "naive" else _greedy_row_match(z, observed)
        resid = z - target
        obj = float(np.mean(resid * resid))
        curve.append(obj)
        d_z = 2.0 * resid / resid.size
        d_img = patch_embed_input_grad(edge, d_z, channels, image_h, image_w)
        guess -= lr * d_img
        np.clip(guess, 0.0, 1.0, out=guess)
    return InvertResult(image=guess, objective=curve)


def _aux_samples(cfg: RunConfig, n: int, rng: np.random.Generator) -> list[Sample]:
    m = cfg.model
    if cfg.data.task == "order_dependent":
        return make_order_dependent(
            n, m.image_h, m.image_w, m.channels, m.patch_h, m.patch_w, rng
        )
    return make_blobs(n, m.image_h, m.image_w, m.channels, m.n_classes, rng)


def blackbox_experiment(
    cfg: RunConfig,
    protection: str,
    e: int,
    seed: int,
    n_train: int = 300,
    n_test: int = 100,
    hidden: int = 64,
    epochs: int = 30,
    lr: float = 0.05,
) -> dict:
    """One full black-box run. Returns a result record for reporting.

    The auxiliary data uses its own seed stream, disjoint from any
    training-data stream derived from the same config.
    """
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0xA77AC4]))
    edge = init_edge(
        cfg.model.image_h, cfg.model.image_w, cfg.model.channels,
        cfg.model.patch_h, cfg.model.patch_w, cfg.model.d,
        cfg.model.n_classes, stream_rng(cfg.train.seed, "edge_weights"),
        position_embedding=cfg.model.position_embedding,
    )
    samples = _aux_samples(cfg, n_train + n_test, rng)
    p_col = (
        sample_perm(cfg.model.d, rng) if protection == "row_column" else None
    )
    pairs = observe_features(edge, samples, protection, e, rng, p_col=p_col)
    dec = train_blackbox(pairs[:n_train], hidden, epochs, lr, rng)
    return {
        "kind": "blackbox",
        "protection": protection,
        "e": e,
        "seed": seed,
        "n_train": n_train,
        "n_test": n_test,
        "hidden": hidden,
        "epochs": epochs,
        "lr": lr,
        "train_mse": decoder_mse(dec, pairs[:n_train]),
        "held_out_mse": decoder_mse(dec, pairs[n_train:]),
    }


def whitebox_experiment(
    cfg: RunConfig,
    protection: str,
    seed: int,
    objective: str = "naive",
    iters: int = 300,
    lr: float = 1.0,
) -> dict:
    """One white-box inversion of a single observed feature."""
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0xB0B5]))
    m = cfg.model
    edge = init_edge(
        m.image_h, m.image_w, m.channels, m.patch_h, m.patch_w, m.d,
        m.n_classes, stream_rng(cfg.train.seed, "edge_weights"),
        position_embedding=m.position_embedding,
    )
    target = _aux_samples(cfg, 1, rng)[0]
    z0 = patch_embed(edge, target.image)
    if protection == "none":
        observed = z0
    else:
        p_col = sample_perm(m.d, rng) if protection == "row_column" else identity(m.d)
        observed = shuffle_feature(z0, sample_perm(m.p, rng), p_col)
    res = whitebox_invert(
        edge, observed, m.channels, m.image_h, m.image_w,
        objective=objective, iters=iters, lr=lr, rng=rng,
    )
    return {
        "kind": "whitebox",
        "protection": protection,
        "objective": objective,
        "seed": seed,
        "iters": iters,
        "lr": lr,
        "final_objective": res.objective[-1],
        "objective_curve": res.objective,
        "reconstruction_mse": mse(res.image, target.image),
        "reconstruction_psnr": psnr(res.image, target.image),
    }
