"""Dataset ingestion: IDX files, deterministic synthetic blobs, batching.

IDX is the big-endian MNIST container (magic 0x00000803 for images,
0x00000801 for labels). Pixels are scaled to [0, 1] and normalized by
per-channel mean/std; the stats are recorded on the Dataset so a test split
can be normalized with its training split's stats.

The synthetic generator places one Gaussian blob position per class (evenly
on a circle) plus pixel noise and a small center jitter, quantized to uint8
before normalization so a synthetic set written to IDX files and re-loaded
reproduces the exact same tensors.
"""

import struct
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801


@dataclass
class Dataset:
    images: np.ndarray  # [n, C, S, S] float32, normalized
    labels: np.ndarray  # [n] int64
    split: str
    provenance: str
    mean: list
    std: list

    @property
    def n(self):
        return self.images.shape[0]

    def normalized_zero(self):
        """Per-channel value of a black pixel after normalization."""
        return [-m / s for m, s in zip(self.mean, self.std)]


def load_idx_images(path):
    with open(path, "rb") as f:
        buf = f.read()
    if len(buf) < 16:
        raise DataError(f"{path}: IDX image header needs 16 bytes, file has {len(buf)}")
    magic, n, rows, cols = struct.unpack_from(">IIII", buf, 0)
    if magic != IMAGES_MAGIC:
        raise DataError(f"{path}: bad image magic 0x{magic:08x} at byte offset 0")
    expected = 16 + n * rows * cols
    if len(buf) != expected:
        raise DataError(
            f"{path}: expected {expected} bytes for {n} {rows}x{cols} images, "
            f"got {len(buf)} (data ends at byte offset {len(buf)})")
    return np.frombuffer(buf, dtype=np.uint8, offset=16).reshape(n, rows, cols)


def load_idx_labels(path):
    with open(path, "rb") as f:
        buf = f.read()
    if len(buf) < 8:
        raise DataError(f"{path}: IDX label header needs 8 bytes, file has {len(buf)}")
    magic, n = struct.unpack_from(">II", buf, 0)
    if magic != LABELS_MAGIC:
        raise DataError(f"{path}: bad label magic 0x{magic:08x} at byte offset 0")
    expected = 8 + n
    if len(buf) != expected:
        raise DataError(
            f"{path}: expected {expected} bytes for {n} labels, got {len(buf)} "
            f"(data ends at byte offset {len(buf)})")
    return np.frombuffer(buf, dtype=np.uint8, offset=8).astype(np.int64)


def write_idx_images(path, images):
    images = np.asarray(images, dtype=np.uint8)
    n, rows, cols = images.shape
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", IMAGES_MAGIC, n, rows, cols))
        f.write(images.tobytes())


def write_idx_labels(path, labels):
    labels = np.asarray(labels)
    with open(path, "wb") as f:
        f.write(struct.pack(">II", LABELS_MAGIC, labels.shape[0]))
        f.write(labels.astype(np.uint8).tobytes())


def _normalize(raw, stats):
    """raw: [n, C, S, S] in [0, 1]. Returns (normalized float32, mean, std)."""
    if stats is None:
        mean = [float(raw[:, c].mean()) for c in range(raw.shape[1])]
        std = [max(float(raw[:, c].std()), 1e-6) for c in range(raw.shape[1])]
    else:
        mean, std = list(stats[0]), list(stats[1])
    out = raw.astype(np.float32)
    for c in range(raw.shape[1]):
        out[:, c] = (out[:, c] - np.float32(mean[c])) / np.float32(std[c])
    return out, mean, std


def load_idx_dataset(images_path, labels_path, *, limit=None, stats=None,
                     split="train", num_classes=None):
    images = load_idx_images(images_path)
    labels = load_idx_labels(labels_path)
    if images.shape[0] != labels.shape[0]:
        raise DataError(
            f"image count {images.shape[0]} != label count {labels.shape[0]} "
            f"({images_path} vs {labels_path})")
    if limit is not None:
        images = images[:limit]
        labels = labels[:limit]
    if num_classes is not None and labels.size and labels.max() >= num_classes:
        bad = int(np.argmax(labels >= num_classes))
        raise DataError(f"label {int(labels[bad])} at index {bad} outside "
                        f"[0, {num_classes})")
    raw = (images.astype(np.float32) / 255.0)[:, None, :, :]
    norm, mean, std = _normalize(raw, stats)
    return Dataset(images=norm, labels=labels, split=split,
                   provenance=f"idx:{images_path}", mean=mean, std=std)


def synthetic_pixels(seed, n, config, *, noise=0.15):
    """Deterministic uint8 images + labels, stratified across classes."""
    if n < config.num_classes:
        raise ConfigError(f"need n >= num_classes, got n={n} for "
                          f"{config.num_classes} classes")
    rng = np.random.default_rng(seed)
    K = config.num_classes
    S = config.image_size
    radius = S / 3.0
    sigma = S / 9.0
    centers = [(S / 2.0 + radius * np.cos(2 * np.pi * c / K),
                S / 2.0 + radius * np.sin(2 * np.pi * c / K)) for c in range(K)]
    counts = [n // K + (1 if c < n % K else 0) for c in range(K)]
    labels = np.repeat(np.arange(K, dtype=np.int64), counts)
    labels = labels[rng.permutation(n)]
    yy, xx = np.mgrid[0:S, 0:S]
    images = np.empty((n, S, S), dtype=np.uint8)
    for i in range(n):
        cy, cx = centers[labels[i]][1], centers[labels[i]][0]
        jy, jx = rng.integers(-1, 2, size=2)
        blob = np.exp(-(((yy - cy - jy) ** 2) + ((xx - cx - jx) ** 2))
                      / (2.0 * sigma * sigma))
        pix = blob + noise * rng.standard_normal((S, S))
        images[i] = np.clip(np.rint(np.clip(pix, 0.0, 1.0) * 255.0), 0, 255)
    return images, labels


def gen_synthetic(seed, n, config, *, noise=0.15, stats=None, split="train"):
    images, labels = synthetic_pixels(seed, n, config, noise=noise)
    raw = (images.astype(np.float32) / 255.0)[:, None, :, :]
    if config.channels > 1:
        raw = np.repeat(raw, config.channels, axis=1)
    norm, mean, std = _normalize(raw, stats)
    return Dataset(images=norm, labels=labels, split=split,
                   provenance=f"synthetic:seed={seed},n={n}", mean=mean, std=std)


def iterate_batches(n, batch_size, rng):
    """Seeded shuffled index batches; the last batch may be short."""
    perm = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield perm[start:start + batch_size]


def augment_batch(images, rng, crop_pad=0, flip=False, fill=None):
    """Random shift (pad-and-crop) and horizontal flip; draws one rng sample
    per image per enabled transform, in image order."""
    if not crop_pad and not flip:
        return images
    out = images.copy()
    B, C, S, _ = images.shape
    fill = [0.0] * C if fill is None else fill
    for i in range(B):
        if crop_pad:
            dy, dx = rng.integers(-crop_pad, crop_pad + 1, size=2)
            img = out[i]
            shifted = np.empty_like(img)
            for c in range(C):
                shifted[c] = np.float32(fill[c])
            ys = slice(max(0, dy), min(S, S + dy))
            yd = slice(max(0, -dy), min(S, S - dy))
            xs = slice(max(0, dx), min(S, S + dx))
            xd = slice(max(0, -dx), min(S, S - dx))
            shifted[:, yd, xd] = img[:, ys, xs]
            out[i] = shifted
        if flip and rng.random() < 0.5:
            out[i] = out[i, :, :, ::-1]
    return out
