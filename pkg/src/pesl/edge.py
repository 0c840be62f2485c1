"""Edge-side model pieces: patch embedding, pooled head, loss.

The edge owns the first and last slices of the network. F1 turns an
image into the (p, d) token matrix that is shuffled before leaving
the device; F3 turns the returned feature matrix into class logits.
Position embedding, when enabled, is added here, before any shuffle,
so order-sensitive tasks survive the row shuffle.
"""

import struct
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ConfigError, ContractError, DecodeError, DomainError, ShapeError
from .tensor import as_matrix, matmul


@dataclass
class EdgeWeights:
    """Weights held on the edge device.

    w_embed maps a flattened patch (channel-major, then row-major
    within the patch) to a d-vector; pos_embed is None when position
    embedding is disabled.
    """

    w_embed: np.ndarray
    b_embed: np.ndarray
    w_head: np.ndarray
    b_head: np.ndarray
    pos_embed: Optional[np.ndarray]
    patch_h: int
    patch_w: int

    @property
    def d(self) -> int:
        return self.w_embed.shape[1]

    @property
    def n_classes(self) -> int:
        return self.w_head.shape[1]

    def copy(self) -> "EdgeWeights":
        return EdgeWeights(
            w_embed=self.w_embed.copy(),
            b_embed=self.b_embed.copy(),
            w_head=self.w_head.copy(),
            b_head=self.b_head.copy(),
            pos_embed=None if self.pos_embed is None else self.pos_embed.copy(),
            patch_h=self.patch_h,
            patch_w=self.patch_w,
        )


@dataclass
class EdgeGradients:
    d_w_embed: np.ndarray
    d_b_embed: np.ndarray
    d_w_head: np.ndarray
    d_b_head: np.ndarray
    d_pos_embed: Optional[np.ndarray]


def init_edge(
    image_h: int,
    image_w: int,
    channels: int,
    patch_h: int,
    patch_w: int,
    d: int,
    n_classes: int,
    rng: np.random.Generator,
    position_embedding: bool = False,
    c: float = 1.0,
) -> EdgeWeights:
    """Random edge weights, uniform entries bounded by c/sqrt(fan-in)."""
    if image_h % patch_h != 0 or image_w % patch_w != 0:
        raise ConfigError(
            f"patch {patch_h}x{patch_w} must tile the {image_h}x{image_w} image"
        )
    patch_dim = patch_h * patch_w * channels
    p = (image_h // patch_h) * (image_w // patch_w)
    eb = c / np.sqrt(patch_dim)
    hb = c / np.sqrt(d)
    return EdgeWeights(
        w_embed=rng.uniform(-eb, eb, (patch_dim, d)),
        b_embed=rng.uniform(-eb, eb, d),
        w_head=rng.uniform(-hb, hb, (d, n_classes)),
        b_head=rng.uniform(-hb, hb, n_classes),
        pos_embed=rng.uniform(-hb, hb, (p, d)) if position_embedding else None,
        patch_h=patch_h,
        patch_w=patch_w,
    )


def extract_patches(image: np.ndarray, patch_h: int, patch_w: int) -> np.ndarray:
    """Flatten non-overlapping patches into a (p, patch_dim) matrix.

    Patches run in raster order over the grid; within a patch the
    layout is channel-major, then rows, then columns.
    """
    img = np.ascontiguousarray(image, dtype=np.float64)
    if img.ndim != 3:
        raise ShapeError(f"image must be (channels, H, W), got shape {img.shape}")
    c, h, w = img.shape
    if h % patch_h != 0 or w % patch_w != 0:
        raise ShapeError(
            f"patch {patch_h}x{patch_w} does not tile image {h}x{w}"
        )
    if not np.isfinite(img).all():
        raise ContractError("image contains non-finite pixels")
    gh, gw = h // patch_h, w // patch_w
    # (c, gh, ph, gw, pw) -> (gh, gw, c, ph, pw) -> (p, patch_dim)
    tiles = img.reshape(c, gh, patch_h, gw, patch_w).transpose(1, 3, 0, 2, 4)
    return np.ascontiguousarray(tiles.reshape(gh * gw, c * patch_h * patch_w))


def patches_to_image(
    patches: np.ndarray, channels: int, image_h: int, image_w: int,
    patch_h: int, patch_w: int,
) -> np.ndarray:
    """Inverse of extract_patches (exact scatter)."""
    gh, gw = image_h // patch_h, image_w // patch_w
    tiles = np.ascontiguousarray(patches, dtype=np.float64).reshape(
        gh, gw, channels, patch_h, patch_w
    )
    return np.ascontiguousarray(
        tiles.transpose(2, 0, 3, 1, 4).reshape(channels, image_h, image_w)
    )


def embed_tokens(w: EdgeWeights, patches: np.ndarray) -> np.ndarray:
    """Affine embed of pre-extracted patches, plus position embedding."""
    if patches.shape[1] != w.w_embed.shape[0]:
        raise ShapeError(
            f"patch dim {patches.shape[1]} != embedding fan-in {w.w_embed.shape[0]}"
        )
    z0 = matmul(patches, w.w_embed) + w.b_embed
    if w.pos_embed is not None:
        if w.pos_embed.shape != z0.shape:
            raise ShapeError(
                f"pos_embed shape {w.pos_embed.shape} != token shape {z0.shape}"
            )
        z0 = z0 + w.pos_embed
    return z0


def patch_embed(w: EdgeWeights, image: np.ndarray) -> np.ndarray:
    """F1: image -> (p, d) token matrix (plus position embedding if set)."""
    return embed_tokens(w, extract_patches(image, w.patch_h, w.patch_w))


def patch_embed_backward(
    w: EdgeWeights, patches: np.ndarray, d_z0: np.ndarray
) -> tuple[np.ndarray, np.ndarray, Optional[np.ndarray]]:
    """Gradients of patch_embed wrt its weights.

    Returns (d_w_embed, d_b_embed, d_pos_embed); the position-embedding
    gradient is the token gradient itself.
    """
    d_z0 = as_matrix(d_z0)
    d_w = matmul(np.ascontiguousarray(patches.T), d_z0)
    d_b = d_z0.sum(axis=0)
    d_pos = d_z0.copy() if w.pos_embed is not None else None
    return d_w, d_b, d_pos


def patch_embed_input_grad(
    w: EdgeWeights, d_z0: np.ndarray, channels: int, image_h: int, image_w: int
) -> np.ndarray:
    """Gradient of patch_embed wrt the image (used by inversion attacks)."""
    d_patches = matmul(as_matrix(d_z0), np.ascontiguousarray(w.w_embed.T))
    return patches_to_image(
        d_patches, channels, image_h, image_w, w.patch_h, w.patch_w
    )


def head_forward(w: EdgeWeights, a_final: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """F3 head: mean-pool rows, then affine to logits.

    Mean pooling makes the logits invariant to any pure row
    permutation of a_final (up to rounding), which is what lets the
    edge skip row unshuffling at inference if it only needs argmax.
    Returns (pooled (d,), logits (n_classes,)).
    """
    a = as_matrix(a_final)
    if a.shape[1] != w.d:
        raise ShapeError(f"head_forward: width {a.shape[1]} != head fan-in {w.d}")
    pooled = a.mean(axis=0)
    logits = matmul(pooled[None, :], w.w_head)[0] + w.b_head
    return pooled, logits


def head_backward(
    w: EdgeWeights, pooled: np.ndarray, d_logits: np.ndarray, p: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Backward of head_forward. Returns (d_w_head, d_b_head, d_a_final)."""
    d_w_head = matmul(
        np.ascontiguousarray(pooled[:, None]), np.ascontiguousarray(d_logits[None, :])
    )
    d_b_head = d_logits.copy()
    d_pooled = matmul(w.w_head, np.ascontiguousarray(d_logits[:, None]))[:, 0]
    d_a_final = np.repeat(d_pooled[None, :] / p, p, axis=0)
    return d_w_head, d_b_head, d_a_final


def one_hot(label: int, n_classes: int) -> np.ndarray:
    if not 0 <= label < n_classes:
        raise DomainError(f"label {label} out of range 0..{n_classes - 1}")
    t = np.zeros(n_classes, dtype=np.float64)
    t[label] = 1.0
    return t


def cross_entropy(logits: np.ndarray, target) -> tuple[float, np.ndarray]:
    """Softmax cross entropy against an int label or a soft label vector.

    Returns (loss, dl/dlogits). The gradient is softmax(logits) minus
    the target distribution; the loss uses a max-shifted log-softmax.
    """
    logits = np.ascontiguousarray(logits, dtype=np.float64)
    if logits.ndim != 1:
        raise ShapeError(f"logits must be 1-D, got shape {logits.shape}")
    if not np.isfinite(logits).all():
        raise ContractError("logits contain non-finite values")
    n = logits.size
    if isinstance(target, (int, np.integer)):
        t = one_hot(int(target), n)
    else:
        t = np.ascontiguousarray(target, dtype=np.float64)
        if t.shape != (n,):
            raise ShapeError(f"target shape {t.shape} != logits shape {logits.shape}")
        if (t < 0).any() or abs(float(t.sum()) - 1.0) > 1e-9:
            raise ContractError("soft label must be a probability vector")
    shift = logits - logits.max()
    log_z = np.log(np.exp(shift).sum())
    log_probs = shift - log_z
    loss = float(-(t * log_probs).sum())
    d_logits = np.exp(log_probs) - t
    return loss, d_logits


EDGE_FILE_VERSION = 1

# role tags in the edge weight container
_EDGE_ROLES = {"w_embed": 1, "b_embed": 2, "w_head": 3, "b_head": 4, "pos_embed": 5}
_EDGE_NAMES = {v: k for k, v in _EDGE_ROLES.items()}


def save_edge(path: str, w: EdgeWeights) -> None:
    """Write edge weights to a single binary container."""
    entries = []
    for name, role in _EDGE_ROLES.items():
        v = getattr(w, name)
        if v is None:
            continue
        mat = v if v.ndim == 2 else v[None, :]
        entries.append(
            struct.pack("<BII", role, mat.shape[0], mat.shape[1])
            + np.ascontiguousarray(mat, dtype="<f8").tobytes()
        )
    head = struct.pack("<BIIB", EDGE_FILE_VERSION, w.patch_h, w.patch_w, len(entries))
    with open(path, "wb") as fh:
        fh.write(head + b"".join(entries))


def load_edge(path: str) -> EdgeWeights:
    """Read an edge weight container written by save_edge."""
    with open(path, "rb") as fh:
        buf = fh.read()
    off = 0

    def need(n: int, what: str):
        nonlocal off
        if off + n > len(buf):
            raise DecodeError(f"edge file truncated reading {what}", off)
        piece = buf[off : off + n]
        off += n
        return piece

    version, patch_h, patch_w, n_entries = struct.unpack("<BIIB", need(10, "header"))
    if version != EDGE_FILE_VERSION:
        raise DecodeError(f"unsupported edge file version {version}", 0)
    kw = {"pos_embed": None}
    for _ in range(n_entries):
        at = off
        role, rows, cols = struct.unpack("<BII", need(9, "entry header"))
        if role not in _EDGE_NAMES:
            raise DecodeError(f"unknown edge weight role tag {role}", at)
        name = _EDGE_NAMES[role]
        data = np.frombuffer(need(rows * cols * 8, f"{name} data"), dtype="<f8")
        data = data.reshape(rows, cols).astype(np.float64)
        if name in ("b_embed", "b_head"):
            if rows != 1:
                raise DecodeError(f"{name}: vector entry must have 1 row", at)
            kw[name] = data[0]
        else:
            kw[name] = data
    missing = [n for n in ("w_embed", "b_embed", "w_head", "b_head") if n not in kw]
    if missing:
        raise DecodeError(f"edge file missing required weights {missing}", off)
    if off != len(buf):
        raise DecodeError("trailing bytes after final entry", off)
    return EdgeWeights(patch_h=patch_h, patch_w=patch_w, **kw)
