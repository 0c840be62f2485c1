"""Shuffling runtime: privacy transforms, CutMix, split training loop.

The edge never ships a raw feature. Each sample k of epoch e gets a
fresh row permutation R (derived from the key), the model has one
secret column permutation C, and the wire carries

    shuffle_feature:    Z' = R Z C^-1
    unshuffle_output:   Y  = R^-1 Y' C
    shuffle_gradient:   G' = R G C^-1   (gradients of features
    unshuffle_gradient: D  = R^-1 D' C   transform like features)

All four are exact gathers. A cloud stack whose weights are
conjugated with C maps Z' exactly the way the plain stack maps Z, so
shuffled training reproduces vanilla training loss for loss; the
training loop below is mode-blind apart from these four calls.

CutMix happens on images, before embedding and shuffling, and labels
mix by covered-area fraction, so mixing commutes with every privacy
transform.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .cloud import CloudSession
from .config import RunConfig, stream_rng
from .data import Sample, load_csv, make_blobs, make_order_dependent
from .edge import (
    EdgeWeights,
    cross_entropy,
    embed_tokens,
    extract_patches,
    head_backward,
    head_forward,
    init_edge,
    one_hot,
    patch_embed_backward,
)
from .encoder import (
    EncoderBlockWeights,
    conjugate_stack,
    init_blocks,
)
from .errors import ConfigError, ProtocolError
from .permutation import (
    Permutation,
    ShuffleKey,
    apply_cols,
    apply_cols_inv,
    apply_rows,
    inverse,
    make_key,
)
from .transport import LoopbackTransport
from .wire import Kind, hello_message, matrix_message, matrix_of, Message

# epoch tag reserved for evaluation-time row permutations
EVAL_EPOCH = 1_000_000_007


def shuffle_feature(z: np.ndarray, p_row: Permutation, p_col: Permutation) -> np.ndarray:
    """R Z C^-1: what actually leaves the edge."""
    return apply_cols_inv(apply_rows(z, p_row), p_col)


def unshuffle_output(y: np.ndarray, p_row: Permutation, p_col: Permutation) -> np.ndarray:
    """R^-1 Y' C: recover the plain-space feature on the edge."""
    return apply_cols(apply_rows(y, inverse(p_row)), p_col)


def shuffle_gradient(g: np.ndarray, p_row: Permutation, p_col: Permutation) -> np.ndarray:
    """Send a head gradient to the cloud's shuffled coordinates."""
    return shuffle_feature(g, p_row, p_col)


def unshuffle_gradient(d: np.ndarray, p_row: Permutation, p_col: Permutation) -> np.ndarray:
    """Bring the cloud's input gradient back to plain coordinates."""
    return unshuffle_output(d, p_row, p_col)


@dataclass
class MixedSample:
    """A batch element after (possible) CutMix."""

    image: np.ndarray
    soft_label: np.ndarray
    lam: float
    rect: tuple[int, int, int, int]  # x0, y0, width, height
    partner: Optional[int]
    source: int


def cutmix(
    batch: list[Sample],
    rng: np.random.Generator,
    prob: float,
    n_classes: int,
) -> list[MixedSample]:
    """Rectangle mix-up over a batch.

    With probability `prob` a sample gets a uniformly sized and placed
    rectangle of a uniformly chosen partner pasted in; the label
    becomes the area-weighted mix of both one-hots. Pixels outside the
    rectangle are bit-identical to the original, inside bit-identical
    to the partner.
    """
    if not 0.0 <= prob <= 1.0:
        raise ConfigError(f"mixup_prob must be in [0, 1], got {prob}")
    if prob > 0.0 and len(batch) < 2:
        raise ConfigError("mixing needs a partner: batch of 1 with mixup_prob > 0")
    out = []
    for i, s in enumerate(batch):
        decide = rng.random()
        if decide < prob:
            j = int(rng.integers(0, len(batch) - 1))
            if j >= i:
                j += 1
            _, h, w = s.image.shape
            r_w = int(rng.integers(0, w + 1))
            r_h = int(rng.integers(0, h + 1))
            x0 = int(rng.integers(0, w - r_w + 1))
            y0 = int(rng.integers(0, h - r_h + 1))
            img = s.image.copy()
            img[:, y0 : y0 + r_h, x0 : x0 + r_w] = batch[j].image[
                :, y0 : y0 + r_h, x0 : x0 + r_w
            ]
            area = (r_w * r_h) / (w * h)
            lam = 1.0 - area
            soft = lam * one_hot(s.label, n_classes) + area * one_hot(
                batch[j].label, n_classes
            )
            out.append(
                MixedSample(
                    image=img, soft_label=soft, lam=lam,
                    rect=(x0, y0, r_w, r_h), partner=j, source=i,
                )
            )
        else:
            out.append(
                MixedSample(
                    image=s.image, soft_label=one_hot(s.label, n_classes),
                    lam=1.0, rect=(0, 0, 0, 0), partner=None, source=i,
                )
            )
    return out


class _EdgeAccum:
    """Per-batch gradient accumulator for the edge weights."""

    def __init__(self, edge: EdgeWeights):
        self.d_w_embed = np.zeros_like(edge.w_embed)
        self.d_b_embed = np.zeros_like(edge.b_embed)
        self.d_w_head = np.zeros_like(edge.w_head)
        self.d_b_head = np.zeros_like(edge.b_head)
        self.d_pos = (
            np.zeros_like(edge.pos_embed) if edge.pos_embed is not None else None
        )
        self.count = 0

    def apply(self, edge: EdgeWeights, lr: float) -> None:
        if self.count == 0:
            return
        inv = lr / self.count
        edge.w_embed -= inv * self.d_w_embed
        edge.b_embed -= inv * self.d_b_embed
        edge.w_head -= inv * self.d_w_head
        edge.b_head -= inv * self.d_b_head
        if self.d_pos is not None:
            edge.pos_embed -= inv * self.d_pos


def key_for_mode(cfg: RunConfig) -> Optional[ShuffleKey]:
    """Derive the run's shuffle key from the seed streams; None for vanilla."""
    mode = cfg.train.mode
    if mode == "vanilla":
        return None
    key_seed = int(stream_rng(cfg.train.seed, "key").integers(0, 2**63))
    return make_key(
        cfg.model.p,
        cfg.model.d,
        seed=key_seed,
        column_shuffle=(mode == "row_column_shuffle"),
    )


def handshake(transport, cfg: RunConfig) -> None:
    reply = transport.request(
        hello_message(cfg.model.p, cfg.model.d, cfg.model.n_layers)
    )
    if reply.kind != Kind.CONFIG_ACK:
        raise ProtocolError(f"expected CONFIG_ACK, got {reply.kind}")


def _forward_sample(
    cfg: RunConfig,
    edge: EdgeWeights,
    transport,
    image: np.ndarray,
    p_row: Optional[Permutation],
    key: Optional[ShuffleKey],
):
    """One F1 -> cloud -> F3 pass. Returns (patches, y, pooled, logits)."""
    patches = extract_patches(image, edge.patch_h, edge.patch_w)
    z0 = embed_tokens(edge, patches)
    send = z0 if key is None else shuffle_feature(z0, p_row, key.p_col)
    reply = transport.request(matrix_message(Kind.FWD_REQ, send))
    if reply.kind != Kind.FWD_RESP:
        raise ProtocolError(f"expected FWD_RESP, got {reply.kind}")
    y = matrix_of(reply)
    if key is not None:
        y = unshuffle_output(y, p_row, key.p_col)
    pooled, logits = head_forward(edge, y)
    return patches, y, pooled, logits


def train_epoch(
    cfg: RunConfig,
    edge: EdgeWeights,
    transport,
    dataset: list[Sample],
    epoch: int,
    key: Optional[ShuffleKey],
    mixup_rng: np.random.Generator,
    step_records: list,
) -> dict:
    """One pass over the dataset. Appends one record per batch to
    step_records and returns the epoch summary record."""
    bs = cfg.train.batch_size
    n_classes = cfg.model.n_classes
    loss_total = 0.0
    correct = 0
    k = 0  # sample index within the epoch, drives the row-perm stream
    for step, start in enumerate(range(0, len(dataset), bs)):
        batch = dataset[start : start + bs]
        mixed = cutmix(batch, mixup_rng, cfg.train.mixup_prob, n_classes)
        accum = _EdgeAccum(edge)
        batch_loss = 0.0
        batch_correct = 0
        for ms in mixed:
            p_row = key.row_perm(epoch, k) if key is not None else None
            patches, y, pooled, logits = _forward_sample(
                cfg, edge, transport, ms.image, p_row, key
            )
            loss, d_logits = cross_entropy(logits, ms.soft_label)
            if int(np.argmax(logits)) == int(np.argmax(ms.soft_label)):
                batch_correct += 1
            d_w_head, d_b_head, d_y = head_backward(
                edge, pooled, d_logits, y.shape[0]
            )
            send = d_y if key is None else shuffle_gradient(d_y, p_row, key.p_col)
            ack = transport.request(matrix_message(Kind.BWD_REQ, send))
            if ack.kind != Kind.BWD_ACK:
                raise ProtocolError(f"expected BWD_ACK, got {ack.kind}")
            d_z = matrix_of(ack)
            if key is not None:
                d_z = unshuffle_gradient(d_z, p_row, key.p_col)
            d_w_embed, d_b_embed, d_pos = patch_embed_backward(edge, patches, d_z)
            accum.d_w_embed += d_w_embed
            accum.d_b_embed += d_b_embed
            accum.d_w_head += d_w_head
            accum.d_b_head += d_b_head
            if accum.d_pos is not None:
                accum.d_pos += d_pos
            accum.count += 1
            batch_loss += loss
            k += 1
        step_ack = transport.request(Message(Kind.STEP))
        if step_ack.kind != Kind.BWD_ACK:
            raise ProtocolError(f"expected BWD_ACK after STEP, got {step_ack.kind}")
        accum.apply(edge, cfg.train.lr)
        loss_total += batch_loss
        correct += batch_correct
        step_records.append(
            {
                "epoch": epoch,
                "step": step,
                "loss": batch_loss / len(batch),
                "accuracy": batch_correct / len(batch),
                "mode": cfg.train.mode,
            }
        )
    return {
        "epoch": epoch,
        "loss": loss_total / len(dataset),
        "accuracy": correct / len(dataset),
        "mode": cfg.train.mode,
    }


@dataclass
class EvalResult:
    accuracy: float
    mean_loss: float
    predictions: np.ndarray
    logits: np.ndarray


def evaluate(
    cfg: RunConfig,
    edge: EdgeWeights,
    transport,
    dataset: list[Sample],
    key: Optional[ShuffleKey],
    epoch_tag: int = EVAL_EPOCH,
) -> EvalResult:
    """Inference over a dataset; key=None evaluates without shuffling."""
    n = len(dataset)
    logits_all = np.empty((n, cfg.model.n_classes))
    preds = np.empty(n, dtype=np.int64)
    loss_total = 0.0
    correct = 0
    for k, s in enumerate(dataset):
        p_row = key.row_perm(epoch_tag, k) if key is not None else None
        _, _, _, logits = _forward_sample(cfg, edge, transport, s.image, p_row, key)
        loss, _ = cross_entropy(logits, int(s.label))
        logits_all[k] = logits
        preds[k] = int(np.argmax(logits))
        loss_total += loss
        correct += int(preds[k] == s.label)
    return EvalResult(
        accuracy=correct / n,
        mean_loss=loss_total / n,
        predictions=preds,
        logits=logits_all,
    )


def authorize(
    blocks: list[EncoderBlockWeights], p_col: Permutation
) -> list[EncoderBlockWeights]:
    """Re-key a cloud stack for a column secret: conjugate every block."""
    return conjugate_stack(blocks, p_col)


def deauthorize(
    blocks: list[EncoderBlockWeights], p_col: Permutation
) -> list[EncoderBlockWeights]:
    """Undo authorize(blocks, p_col) exactly (gathers are bit-exact)."""
    return conjugate_stack(blocks, inverse(p_col))


@dataclass
class TrainResult:
    edge: EdgeWeights
    cloud: Optional[list[EncoderBlockWeights]]
    key: Optional[ShuffleKey]
    step_records: list
    epoch_records: list
    eval_result: Optional[EvalResult]


def _synthesize(cfg: RunConfig, n: int, rng) -> list[Sample]:
    m = cfg.model
    if cfg.data.task == "order_dependent":
        return make_order_dependent(
            n, m.image_h, m.image_w, m.channels, m.patch_h, m.patch_w, rng
        )
    return make_blobs(n, m.image_h, m.image_w, m.channels, m.n_classes, rng)


def build_datasets(cfg: RunConfig) -> tuple[list[Sample], list[Sample]]:
    """(train, eval) sets for a config.

    Synthetic data draws the train set from the 'data' stream and the
    eval set (one fifth the train size) from the independent 'eval'
    stream. CSV data is split in file order, last fifth held out.
    """
    if cfg.data.kind == "csv":
        m = cfg.model
        samples = load_csv(cfg.data.path, m.channels, m.image_h, m.image_w)
        cut = max(1, len(samples) - max(1, len(samples) // 5))
        return samples[:cut], samples[cut:]
    eval_n = max(1, cfg.data.n // 5)
    train_set = _synthesize(cfg, cfg.data.n, stream_rng(cfg.train.seed, "data"))
    eval_set = _synthesize(cfg, eval_n, stream_rng(cfg.train.seed, "eval"))
    return train_set, eval_set


def build_model(cfg: RunConfig):
    """Seed-stream init of (cloud blocks, edge weights)."""
    blocks = init_blocks(
        cfg.model.n_layers,
        cfg.model.d,
        stream_rng(cfg.train.seed, "cloud_weights"),
        variant=cfg.model.teb_variant,
    )
    edge = init_edge(
        cfg.model.image_h,
        cfg.model.image_w,
        cfg.model.channels,
        cfg.model.patch_h,
        cfg.model.patch_w,
        cfg.model.d,
        cfg.model.n_classes,
        stream_rng(cfg.train.seed, "edge_weights"),
        position_embedding=cfg.model.position_embedding,
    )
    return blocks, edge


def run_training(
    cfg: RunConfig,
    train_set: list[Sample],
    eval_set: Optional[list[Sample]] = None,
    transport=None,
) -> TrainResult:
    """Full training driver.

    Builds weights and key from the config seed, wires up a loopback
    cloud when no transport is given, and runs every epoch. In
    row_column_shuffle mode the cloud starts from the conjugated
    initial stack (the served model IS the re-keyed model), which is
    what makes the shuffled loss curve reproduce the vanilla one.
    """
    if cfg.train.mode == "row_column_shuffle" and cfg.model.n_heads != 1:
        raise ConfigError(
            "model.n_heads: column shuffle requires single-head attention"
        )
    blocks, edge = build_model(cfg)
    key = key_for_mode(cfg)
    cloud = None
    owns_transport = transport is None
    if key is not None and key.column_shuffled():
        blocks = conjugate_stack(blocks, key.p_col)
    if owns_transport:
        cloud = blocks
        transport = LoopbackTransport(
            CloudSession(cloud, cfg.train.lr, n_heads=cfg.model.n_heads)
        )
    try:
        handshake(transport, cfg)
        mixup_rng = stream_rng(cfg.train.seed, "mixup")
        step_records: list = []
        epoch_records = []
        for epoch in range(cfg.train.epochs):
            epoch_records.append(
                train_epoch(
                    cfg, edge, transport, train_set, epoch, key,
                    mixup_rng, step_records,
                )
            )
        eval_result = None
        if eval_set is not None:
            eval_result = evaluate(cfg, edge, transport, eval_set, key)
    finally:
        if owns_transport:
            transport.close()
    return TrainResult(
        edge=edge,
        cloud=cloud,
        key=key,
        step_records=step_records,
        epoch_records=epoch_records,
        eval_result=eval_result,
    )
