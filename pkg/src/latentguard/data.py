"""Dataset ingestion and synthesis.

Real data enters through the IDX format (big-endian magic + dims header,
row-major pixel bytes) and the CIFAR-10 binary format (3073-byte records,
channel-planar). Pixels normalize to [0, 1] by /255 with no mean subtraction:
perturbation budgets are defined on raw pixel units. The synthetic shape
dataset (squares / crosses / discs on a dark canvas, randomized position,
size and intensity) is the fast deterministic stand-in for desk-scale runs.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .exceptions import ContractError, ParseError

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
SHAPE_KINDS = ("squares", "crosses", "discs")


@dataclass
class Dataset:
    images: np.ndarray  # (n, c, h, w) float32 in [0, 1]
    labels: np.ndarray  # (n,) int64
    split: str = "train"

    def validate(self) -> None:
        if self.images.ndim != 4:
            raise ContractError(f"images must be (n, c, h, w), got {self.images.shape}")
        if self.labels.shape != (self.images.shape[0],):
            raise ContractError(
                f"label count {self.labels.shape} does not match {self.images.shape[0]} images"
            )
        lo, hi = float(self.images.min()), float(self.images.max())
        if lo < 0.0 or hi > 1.0:
            raise ContractError(f"pixel range [{lo}, {hi}] outside [0, 1]")

    def subset(self, mask: np.ndarray) -> "Dataset":
        return Dataset(self.images[mask].copy(), self.labels[mask].copy(), self.split)


def merge_datasets(parts: list[Dataset], split: str | None = None) -> Dataset:
    images = np.concatenate([p.images for p in parts])
    labels = np.concatenate([p.labels for p in parts])
    return Dataset(images, labels, split or parts[0].split)


def _read_exact(f, count: int, path: str, offset: int) -> bytes:
    chunk = f.read(count)
    if len(chunk) != count:
        raise ParseError(
            f"{path}: truncated at byte {offset + len(chunk)}, wanted {count} bytes from {offset}"
        )
    return chunk


def load_idx(images_path, labels_path, split: str = "test") -> Dataset:
    """Parse an IDX image/label file pair into a Dataset."""
    images_path, labels_path = str(images_path), str(labels_path)
    with open(images_path, "rb") as f:
        header = _read_exact(f, 16, images_path, 0)
        magic, count, rows, cols = struct.unpack(">IIII", header)
        if magic != IDX_IMAGES_MAGIC:
            raise ParseError(
                f"{images_path}: bad magic 0x{magic:08x} at byte 0, expected 0x{IDX_IMAGES_MAGIC:08x}"
            )
        payload = _read_exact(f, count * rows * cols, images_path, 16)
        if f.read(1):
            raise ParseError(f"{images_path}: trailing bytes after byte {16 + len(payload)}")
    with open(labels_path, "rb") as f:
        header = _read_exact(f, 8, labels_path, 0)
        magic, label_count = struct.unpack(">II", header)
        if magic != IDX_LABELS_MAGIC:
            raise ParseError(
                f"{labels_path}: bad magic 0x{magic:08x} at byte 0, expected 0x{IDX_LABELS_MAGIC:08x}"
            )
        label_bytes = _read_exact(f, label_count, labels_path, 8)
    if label_count != count:
        raise ParseError(
            f"count mismatch: {count} images in {images_path} vs {label_count} labels in {labels_path}"
        )
    images = np.frombuffer(payload, dtype=np.uint8).reshape(count, 1, rows, cols)
    labels = np.frombuffer(label_bytes, dtype=np.uint8).astype(np.int64)
    return Dataset((images / np.float32(255.0)).astype(np.float32), labels, split)


CIFAR_RECORD = 3073  # 1 label byte + 3 * 32 * 32 pixel bytes


def load_cifar10_bin(paths, split: str = "test") -> Dataset:
    """Parse one or more CIFAR-10 binary batch files."""
    images, labels = [], []
    for path in [str(p) for p in paths]:
        with open(path, "rb") as f:
            blob = f.read()
        if len(blob) % CIFAR_RECORD:
            raise ParseError(
                f"{path}: size {len(blob)} is not a multiple of the {CIFAR_RECORD}-byte record"
            )
        records = np.frombuffer(blob, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
        labels.append(records[:, 0].astype(np.int64))
        images.append(records[:, 1:].reshape(-1, 3, 32, 32))
    imgs = np.concatenate(images)
    return Dataset((imgs / np.float32(255.0)).astype(np.float32),
                   np.concatenate(labels), split)


def _resize_matrix(in_size: int, out_size: int, dtype) -> np.ndarray:
    mat = np.zeros((out_size, in_size), dtype=dtype)
    ratio = in_size / out_size
    for i in range(out_size):
        src = (i + 0.5) * ratio - 0.5
        lo = int(np.floor(src))
        frac = src - lo
        i0 = min(max(lo, 0), in_size - 1)
        i1 = min(max(lo + 1, 0), in_size - 1)
        mat[i, i0] += 1.0 - frac
        mat[i, i1] += frac
    return mat


def resize_bilinear(images: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resample (n, c, h, w) to (n, c, out_h, out_w), edges clamped."""
    images = np.asarray(images)
    h, w = images.shape[2], images.shape[3]
    if (h, w) == (out_h, out_w):
        return images.copy()
    ah = _resize_matrix(h, out_h, images.dtype)
    aw = _resize_matrix(w, out_w, images.dtype)
    return np.ascontiguousarray(np.matmul(np.matmul(ah, images), aw.T))


def resize_bilinear_32(images: np.ndarray) -> np.ndarray:
    """Resize any (n, c, h, w) image stack to the protocol's 32 x 32."""
    return resize_bilinear(images, 32, 32)


def _draw_square(canvas: np.ndarray, rng: np.random.Generator) -> None:
    side = int(rng.integers(14, 23))
    top = int(rng.integers(0, 32 - side))
    left = int(rng.integers(0, 32 - side))
    intensity = float(rng.uniform(0.6, 1.0))
    canvas[top:top + side, left:left + side] = intensity


def _draw_cross(canvas: np.ndarray, rng: np.random.Generator) -> None:
    arm = int(rng.integers(7, 12))
    thick = int(rng.integers(2, 5))
    cy = int(rng.integers(arm, 32 - arm))
    cx = int(rng.integers(arm, 32 - arm))
    intensity = float(rng.uniform(0.6, 1.0))
    half = thick // 2
    canvas[cy - half:cy - half + thick, cx - arm:cx + arm + 1] = intensity
    canvas[cy - arm:cy + arm + 1, cx - half:cx - half + thick] = intensity


_DISC_GRID = np.stack(np.meshgrid(np.arange(32), np.arange(32), indexing="ij"))


def _draw_disc(canvas: np.ndarray, rng: np.random.Generator) -> None:
    radius = int(rng.integers(4, 8))
    cy = int(rng.integers(radius + 1, 31 - radius))
    cx = int(rng.integers(radius + 1, 31 - radius))
    intensity = float(rng.uniform(0.6, 1.0))
    mask = (_DISC_GRID[0] - cy) ** 2 + (_DISC_GRID[1] - cx) ** 2 <= radius ** 2
    canvas[mask] = intensity


_DRAWERS = {"squares": _draw_square, "crosses": _draw_cross, "discs": _draw_disc}


def make_synthetic(kind: str, n: int, seed: int, split: str = "train") -> Dataset:
    """Deterministic 32x32 single-channel dataset of one shape family."""
    if kind not in SHAPE_KINDS:
        raise ContractError(f"unknown shape kind {kind!r}; expected one of {SHAPE_KINDS}")
    if n < 1:
        raise ContractError(f"n must be >= 1, got {n}")
    rng = np.random.default_rng(np.random.SeedSequence((seed, SHAPE_KINDS.index(kind))))
    draw = _DRAWERS[kind]
    images = np.zeros((n, 1, 32, 32), dtype=np.float32)
    for i in range(n):
        draw(images[i, 0], rng)
    labels = np.full(n, SHAPE_KINDS.index(kind), dtype=np.int64)
    return Dataset(images, labels, split)


def make_synthetic_suite(n_per_kind: int, seed: int, split: str = "train") -> Dataset:
    """All three shape families in one labeled dataset."""
    return merge_datasets(
        [make_synthetic(kind, n_per_kind, seed, split) for kind in SHAPE_KINDS], split
    )
