"""Dataset ingestion and synthesis.

IDX image/label files (the MNIST / Fashion-MNIST distribution format),
deterministic splits and per-class subsetting, Gaussian blob fixtures, and a
procedural 28x28 digit renderer used as a desk-scale stand-in when the real
IDX files are not available.
"""
from __future__ import annotations

import gzip
import logging
import struct
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConsistencyError, FormatError, UsageError

logger = logging.getLogger(__name__)

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801


@dataclass
class LabeledDataset:
    images: list[np.ndarray]  # tensors with values in [0, 1]; image data is CxHxW
    labels: list[int]
    name: str = ""

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise ConsistencyError(
                f"{len(self.images)} images vs {len(self.labels)} labels in dataset {self.name!r}"
            )
        if any(l < 0 for l in self.labels):
            raise ConsistencyError("labels must be nonnegative")

    def __len__(self) -> int:
        return len(self.images)

    @property
    def num_classes(self) -> int:
        return max(self.labels) + 1 if self.labels else 0

    def class_counts(self) -> dict[int, int]:
        return dict(sorted(Counter(self.labels).items()))


def _open_maybe_gzip(path):
    p = Path(path)
    return gzip.open(p, "rb") if p.suffix == ".gz" else open(p, "rb")


def load_idx(images_path, labels_path) -> LabeledDataset:
    """Parse IDX image/label files; uint8 pixels are scaled by 1/255.

    Headers are big-endian. Raises FormatError on a bad magic number and
    ConsistencyError when the image and label counts disagree.
    """
    with _open_maybe_gzip(images_path) as f:
        head = f.read(16)
        if len(head) < 16:
            raise FormatError(f"{images_path}: truncated IDX header")
        magic, n, rows, cols = struct.unpack(">IIII", head)
        if magic != IMAGES_MAGIC:
            raise FormatError(f"{images_path}: bad images magic 0x{magic:08x}, expected 0x{IMAGES_MAGIC:08x}")
        payload = f.read(n * rows * cols)
        if len(payload) != n * rows * cols:
            raise FormatError(f"{images_path}: expected {n * rows * cols} pixel bytes, got {len(payload)}")
        pixels = np.frombuffer(payload, dtype=np.uint8).reshape(n, rows, cols)

    with _open_maybe_gzip(labels_path) as f:
        head = f.read(8)
        if len(head) < 8:
            raise FormatError(f"{labels_path}: truncated IDX header")
        magic, m = struct.unpack(">II", head)
        if magic != LABELS_MAGIC:
            raise FormatError(f"{labels_path}: bad labels magic 0x{magic:08x}, expected 0x{LABELS_MAGIC:08x}")
        raw = f.read(m)
        if len(raw) != m:
            raise FormatError(f"{labels_path}: expected {m} label bytes, got {len(raw)}")
        labels = np.frombuffer(raw, dtype=np.uint8)

    if n != m:
        raise ConsistencyError(f"{n} images but {m} labels")
    images = [pixels[i].astype(np.float64).reshape(1, rows, cols) / 255.0 for i in range(n)]
    name = Path(images_path).stem
    logger.info("loaded %d images (%dx%d) from %s", n, rows, cols, images_path)
    return LabeledDataset(images=images, labels=[int(l) for l in labels], name=name)


def save_idx(dataset: LabeledDataset, images_path, labels_path) -> None:
    """Write a dataset back out as IDX files (inverse of load_idx, uint8 quantized)."""
    if not dataset.images:
        raise UsageError("cannot write an empty dataset")
    c, rows, cols = dataset.images[0].shape
    if c != 1:
        raise UsageError("IDX image files are single-channel")
    with open(images_path, "wb") as f:
        f.write(struct.pack(">IIII", IMAGES_MAGIC, len(dataset), rows, cols))
        for img in dataset.images:
            f.write(np.round(img.reshape(rows, cols) * 255.0).astype(np.uint8).tobytes())
    with open(labels_path, "wb") as f:
        f.write(struct.pack(">II", LABELS_MAGIC, len(dataset)))
        f.write(bytes(dataset.labels))


def split(dataset: LabeledDataset, train_fraction: float, seed: int = 0) -> tuple[LabeledDataset, LabeledDataset]:
    """Seeded shuffled partition into (train, test)."""
    if not 0.0 < train_fraction < 1.0:
        raise UsageError(f"train_fraction must lie strictly between 0 and 1, got {train_fraction}")
    n = len(dataset)
    n_train = int(round(train_fraction * n))
    if n_train == 0 or n_train == n:
        raise UsageError(f"split of {n} items at fraction {train_fraction} leaves one side empty")
    order = np.random.default_rng(seed).permutation(n)
    def take(idx, suffix):
        return LabeledDataset(images=[dataset.images[i] for i in idx],
                              labels=[dataset.labels[i] for i in idx],
                              name=f"{dataset.name}/{suffix}")
    train = take(order[:n_train], "train")
    test = take(order[n_train:], "test")
    logger.info("split %s: train %s test %s", dataset.name, train.class_counts(), test.class_counts())
    return train, test


def subset_per_class(dataset: LabeledDataset, per_class: int, seed: int = 0) -> LabeledDataset:
    """First ``per_class`` items of each class after a seeded shuffle."""
    if per_class < 1:
        raise UsageError("per_class must be >= 1")
    order = np.random.default_rng(seed).permutation(len(dataset))
    taken: dict[int, int] = {}
    keep = []
    for i in order:
        lab = dataset.labels[i]
        if taken.get(lab, 0) < per_class:
            taken[lab] = taken.get(lab, 0) + 1
            keep.append(i)
    keep.sort()
    short = {c: k for c, k in taken.items() if k < per_class}
    if short:
        logger.warning("subset_per_class: classes with fewer than %d items: %s", per_class, short)
    return LabeledDataset(images=[dataset.images[i] for i in keep],
                          labels=[dataset.labels[i] for i in keep],
                          name=f"{dataset.name}/subset")


def synthetic_blobs(num_classes: int, per_class: int, dim: int, separation: float,
                    seed: int = 0) -> LabeledDataset:
    """Gaussian blobs around evenly spaced centers, clipped to [0, 1].

    ``separation`` is the distance between adjacent class centers in units of
    the per-coordinate standard deviation.
    """
    if min(num_classes, per_class, dim) < 1 or separation <= 0:
        raise UsageError("all blob parameters must be positive")
    rng = np.random.default_rng(seed)
    lo, hi = 0.15, 0.85
    ts = np.linspace(lo, hi, num_classes) if num_classes > 1 else np.array([0.5])
    centers = np.repeat(ts[:, None], dim, axis=1)
    gap = (ts[1] - ts[0]) * np.sqrt(dim) if num_classes > 1 else 0.35
    sigma = gap / separation
    images, labels = [], []
    for c in range(num_classes):
        pts = rng.normal(centers[c], sigma, size=(per_class, dim))
        for p in pts:
            images.append(np.clip(p, 0.0, 1.0))
            labels.append(c)
    return LabeledDataset(images=images, labels=labels, name="blobs")


# ---------------------------------------------------------------------------
# procedural digits: a learnable 28x28 ten-class image set with a hard-zero
# background, mimicking the sparsity structure of MNIST

def _arc(cx, cy, r, a0, a1, n=22):
    t = np.linspace(a0, a1, n)
    return np.column_stack([cx + r * np.cos(t), cy + r * np.sin(t)])


def _seg(x0, y0, x1, y1):
    return np.array([[x0, y0], [x1, y1]])


_TAU = 2 * np.pi


def _digit_strokes() -> dict[int, list[np.ndarray]]:
    ell = _arc(0.5, 0.5, 1.0, 0, _TAU, n=30)
    zero = np.column_stack([0.5 + 0.20 * np.cos(np.linspace(0, _TAU, 30)),
                            0.5 + 0.30 * np.sin(np.linspace(0, _TAU, 30))])
    return {
        0: [zero],
        1: [_seg(0.40, 0.28, 0.53, 0.15), _seg(0.53, 0.15, 0.53, 0.85)],
        2: [_arc(0.50, 0.32, 0.19, np.pi, _TAU + 0.5), _seg(0.64, 0.42, 0.30, 0.84),
            _seg(0.30, 0.84, 0.72, 0.84)],
        3: [_arc(0.46, 0.32, 0.18, -0.75 * np.pi, 0.45 * np.pi),
            _arc(0.46, 0.67, 0.20, -0.45 * np.pi, 0.75 * np.pi)],
        4: [_seg(0.60, 0.14, 0.32, 0.56), _seg(0.32, 0.56, 0.76, 0.56),
            _seg(0.63, 0.14, 0.63, 0.86)],
        5: [_seg(0.68, 0.16, 0.34, 0.16), _seg(0.34, 0.16, 0.34, 0.47),
            _arc(0.47, 0.65, 0.20, -0.6 * np.pi, 0.7 * np.pi)],
        6: [_seg(0.63, 0.14, 0.46, 0.32), _seg(0.46, 0.32, 0.38, 0.52),
            _arc(0.49, 0.66, 0.17, 0, _TAU, n=26)],
        7: [_seg(0.30, 0.16, 0.72, 0.16), _seg(0.72, 0.16, 0.44, 0.86)],
        8: [_arc(0.50, 0.31, 0.15, 0, _TAU, n=26), _arc(0.50, 0.675, 0.185, 0, _TAU, n=26)],
        9: [_arc(0.50, 0.33, 0.165, 0, _TAU, n=26), _seg(0.66, 0.36, 0.63, 0.60),
            _seg(0.63, 0.60, 0.52, 0.84)],
    }


_STROKES = _digit_strokes()
_GRID = np.stack(np.meshgrid(np.arange(28) + 0.5, np.arange(28) + 0.5, indexing="ij"),
                 axis=-1).reshape(-1, 2)[:, ::-1]  # pixel centers as (x, y)


def _render_digit(digit: int, rng: np.random.Generator, noise: float) -> np.ndarray:
    theta = rng.uniform(-0.14, 0.14)
    scale = rng.uniform(0.85, 1.1)
    shear = rng.uniform(-0.08, 0.08)
    shift = rng.uniform(-1.5, 1.5, size=2)
    width = rng.uniform(0.9, 1.4)
    amp = rng.uniform(0.88, 1.0)
    rot = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
    aff = rot @ np.array([[scale, shear * scale], [0.0, scale]])

    pts_a, pts_b = [], []
    for stroke in _STROKES[digit]:
        p = (stroke - 0.5) @ aff.T + 0.5
        p = p * 28.0 + shift
        pts_a.append(p[:-1])
        pts_b.append(p[1:])
    a = np.concatenate(pts_a)
    b = np.concatenate(pts_b)
    ab = b - a
    denom = np.maximum((ab ** 2).sum(axis=1), 1e-12)
    ap = _GRID[:, None, :] - a[None, :, :]
    t = np.clip((ap * ab[None, :, :]).sum(axis=2) / denom[None, :], 0.0, 1.0)
    proj = a[None, :, :] + t[:, :, None] * ab[None, :, :]
    d2 = ((_GRID[:, None, :] - proj) ** 2).sum(axis=2).min(axis=1)
    ink = amp * np.exp(-d2 / (2.0 * width ** 2))
    mask = ink > 0.08
    if noise > 0:
        ink = ink + rng.normal(0.0, noise, size=ink.shape) * mask
    img = np.where(mask, np.clip(ink, 0.0, 1.0), 0.0)
    return img.reshape(1, 28, 28)


def synthetic_digits(per_class: int, seed: int = 0, noise: float = 0.05) -> LabeledDataset:
    """Procedural ten-class 28x28 digit images (desk-scale stand-in for MNIST)."""
    if per_class < 1:
        raise UsageError("per_class must be >= 1")
    rng = np.random.default_rng(seed)
    images, labels = [], []
    for i in range(per_class):
        for digit in range(10):
            images.append(_render_digit(digit, rng, noise))
            labels.append(digit)
    return LabeledDataset(images=images, labels=labels, name="synthetic-digits")
