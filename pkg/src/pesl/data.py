"""Synthetic tasks and CSV ingestion.

Two generators:

  blobs            class-conditional Gaussian blob. Class centers sit
                   OFF the patch grid on purpose: the pooled head over
                   an order-equivariant encoder cannot see patch
                   order without position embedding, so the class
                   signal must live in patch content. Off-grid centers
                   give each class a distinct within-patch appearance.

  order_dependent  label 1 iff patch mean intensities ascend in
                   raster order. Solvable only with position
                   embedding enabled; reordering the patches of a
                   positive image flips its label.

CSV rows are `label, pixel, pixel, ...` with pixels in channel-major
raster order; floats are written with repr so a write/read round trip
is bit-exact.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DataError, DomainError

# fractional (row, col) blob centers chosen so every class lands at a
# different offset inside its patch: the class stays decodable from
# patch content alone, which a permutation-invariant pooled head needs
_BLOB_CENTERS = ((0.22, 0.22), (0.60, 0.10), (0.15, 0.85), (0.90, 0.65))


@dataclass
class Sample:
    """One labeled image, pixels float64 in [0, 1], shape (C, H, W)."""

    image: np.ndarray
    label: int


def make_blobs(
    n: int,
    image_h: int,
    image_w: int,
    channels: int,
    n_classes: int,
    rng: np.random.Generator,
    noise: float = 0.04,
) -> list[Sample]:
    """Gaussian-blob task: the class picks the blob center."""
    if not 2 <= n_classes <= len(_BLOB_CENTERS):
        raise DomainError(
            f"blobs task supports 2..{len(_BLOB_CENTERS)} classes, got {n_classes}"
        )
    if n < 1:
        raise DomainError(f"need n >= 1 samples, got {n}")
    rows = np.arange(image_h, dtype=np.float64)[:, None]
    cols = np.arange(image_w, dtype=np.float64)[None, :]
    sigma = 0.12 * max(image_h, image_w)
    samples = []
    for _ in range(n):
        label = int(rng.integers(0, n_classes))
        cy = _BLOB_CENTERS[label][0] * (image_h - 1) + rng.uniform(-0.4, 0.4)
        cx = _BLOB_CENTERS[label][1] * (image_w - 1) + rng.uniform(-0.4, 0.4)
        blob = np.exp(-((rows - cy) ** 2 + (cols - cx) ** 2) / (2.0 * sigma * sigma))
        img = np.empty((channels, image_h, image_w), dtype=np.float64)
        for ch in range(channels):
            img[ch] = blob + rng.normal(0.0, noise, (image_h, image_w))
        np.clip(img, 0.0, 1.0, out=img)
        samples.append(Sample(image=img, label=label))
    return samples


def _patch_means(image: np.ndarray, patch_h: int, patch_w: int) -> np.ndarray:
    c, h, w = image.shape
    gh, gw = h // patch_h, w // patch_w
    tiles = image.reshape(c, gh, patch_h, gw, patch_w)
    return tiles.mean(axis=(0, 2, 4)).reshape(gh * gw)


def make_order_dependent(
    n: int,
    image_h: int,
    image_w: int,
    channels: int,
    patch_h: int,
    patch_w: int,
    rng: np.random.Generator,
    noise: float = 0.02,
) -> list[Sample]:
    """Patch-order task: label 1 iff patch means ascend in raster order.

    Each patch is filled with a base intensity plus pixel noise. Base
    intensities are well separated, so the true ordering survives the
    noise; every generated sample is self-checked.
    """
    if image_h % patch_h != 0 or image_w % patch_w != 0:
        raise DomainError(
            f"patch {patch_h}x{patch_w} must tile the {image_h}x{image_w} image"
        )
    p = (image_h // patch_h) * (image_w // patch_w)
    if p < 2:
        raise DomainError("order_dependent task needs at least 2 patches")
    base = np.linspace(0.15, 0.85, p)
    gh, gw = image_h // patch_h, image_w // patch_w
    samples = []
    for _ in range(n):
        label = int(rng.integers(0, 2))
        levels = base + rng.uniform(-0.02, 0.02, p)
        levels.sort()
        if label == 1:
            order = np.arange(p)
        else:
            # any non-identity placement of strictly increasing levels
            # breaks the ascending property
            order = np.arange(p)
            while (order == np.arange(p)).all():
                rng.shuffle(order)
        arranged = np.empty(p)
        arranged[order] = levels  # patch order[i] gets the i-th smallest level
        img = np.empty((channels, image_h, image_w), dtype=np.float64)
        for idx in range(p):
            gy, gx = divmod(idx, gw)
            tile = arranged[idx] + rng.uniform(
                -noise, noise, (channels, patch_h, patch_w)
            )
            img[
                :,
                gy * patch_h : (gy + 1) * patch_h,
                gx * patch_w : (gx + 1) * patch_w,
            ] = tile
        np.clip(img, 0.0, 1.0, out=img)
        means = _patch_means(img, patch_h, patch_w)
        ascending = bool((np.diff(means) > 0).all())
        if ascending != (label == 1):
            raise DataError("order_dependent self-check failed: label does not match order")
        samples.append(Sample(image=img, label=label))
    return samples


def save_csv(path: str, samples: list[Sample]) -> None:
    """Write samples as `label, pixels...` rows (repr floats, lossless)."""
    with open(path, "w", encoding="utf-8") as fh:
        for s in samples:
            flat = s.image.reshape(-1)
            fh.write(str(int(s.label)))
            for v in flat:
                fh.write(",")
                fh.write(repr(float(v)))
            fh.write("\n")


def load_csv(
    path: str, channels: int, image_h: int, image_w: int
) -> list[Sample]:
    """Read a CSV written by save_csv (or hand-made to the same shape)."""
    want = channels * image_h * image_w
    samples = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != want + 1:
                raise DataError(
                    f"{path}:{lineno}: expected 1 label + {want} pixels, "
                    f"got {len(parts)} fields"
                )
            try:
                label = int(parts[0])
                pixels = np.array([float(x) for x in parts[1:]], dtype=np.float64)
            except ValueError as e:
                raise DataError(f"{path}:{lineno}: {e}") from None
            if not np.isfinite(pixels).all():
                raise DataError(f"{path}:{lineno}: non-finite pixel value")
            samples.append(
                Sample(image=pixels.reshape(channels, image_h, image_w), label=label)
            )
    if not samples:
        raise DataError(f"{path}: no samples found")
    return samples
