"""Dataset ingestion: idx image/label files and CIFAR-10 binary batches.

Images come back as float32 in [0, 1], shape (N, C, H, W); normalization
(mean/std) is applied later by the engine using whatever the model
manifest declares. Loaders are strict about magic numbers and lengths.
"""

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
CIFAR_RECORD = 3073  # 1 label byte + 3 * 32 * 32 pixels


class DatasetError(ValueError):
    pass


@dataclass
class LabeledDataset:
    images: np.ndarray  # (N, C, H, W) float32 in [0, 1]
    labels: np.ndarray  # (N,) int64
    num_classes: int = 10

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise DatasetError(
                f"{len(self.images)} images vs {len(self.labels)} labels"
            )
        if len(self.labels) and (
            self.labels.min() < 0 or self.labels.max() >= self.num_classes
        ):
            raise DatasetError(f"labels outside [0, {self.num_classes})")

    def __len__(self):
        return len(self.labels)

    def subset(self, indices):
        return LabeledDataset(
            images=self.images[indices],
            labels=self.labels[indices],
            num_classes=self.num_classes,
        )


def _read_raw(path):
    raw = Path(path).read_bytes()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def read_idx_images(path):
    raw = _read_raw(path)
    if len(raw) < 16:
        raise DatasetError(f"{path}: truncated idx header")
    magic, n, rows, cols = struct.unpack(">4i", raw[:16])
    if magic != IDX_IMAGES_MAGIC:
        raise DatasetError(f"{path}: bad magic 0x{magic:08x} for idx images")
    if len(raw) != 16 + n * rows * cols:
        raise DatasetError(f"{path}: expected {n} images of {rows}x{cols}, file truncated")
    return np.frombuffer(raw, np.uint8, offset=16).reshape(n, rows, cols)


def read_idx_labels(path):
    raw = _read_raw(path)
    if len(raw) < 8:
        raise DatasetError(f"{path}: truncated idx header")
    magic, n = struct.unpack(">2i", raw[:8])
    if magic != IDX_LABELS_MAGIC:
        raise DatasetError(f"{path}: bad magic 0x{magic:08x} for idx labels")
    if len(raw) != 8 + n:
        raise DatasetError(f"{path}: expected {n} labels, file truncated")
    return np.frombuffer(raw, np.uint8, offset=8)


def _labels_path(images_path):
    p = Path(images_path)
    name = p.name.replace("images-idx3", "labels-idx1")
    if name == p.name:
        raise DatasetError(f"cannot derive labels filename from {p.name}")
    return p.with_name(name)


def _find_idx_images(directory, split):
    for suffix in ("", ".gz"):
        p = Path(directory) / f"{split}-images-idx3-ubyte{suffix}"
        if p.is_file():
            return p
    raise DatasetError(f"no {split} idx images under {directory}")


def load_dataset(path, format="mnist-idx", split="t10k"):
    """Load a labeled dataset.

    mnist-idx: `path` is an images idx file (labels file found by naming
    convention) or a directory holding `<split>-images-idx3-ubyte[.gz]`.
    cifar10-bin: `path` is a batch .bin file or a directory holding
    `test_batch.bin`.
    """
    path = Path(path)
    if format == "mnist-idx":
        images_path = path if path.is_file() else _find_idx_images(path, split)
        images = read_idx_images(images_path)
        labels = read_idx_labels(_labels_path(images_path))
        x = images.astype(np.float32)[:, None] / 255.0
        return LabeledDataset(images=x, labels=labels.astype(np.int64))
    if format == "cifar10-bin":
        batch = path if path.is_file() else path / "test_batch.bin"
        raw = np.frombuffer(Path(batch).read_bytes(), np.uint8)
        if raw.size == 0 or raw.size % CIFAR_RECORD:
            raise DatasetError(f"{batch}: size {raw.size} not a multiple of {CIFAR_RECORD}")
        rec = raw.reshape(-1, CIFAR_RECORD)
        labels = rec[:, 0].astype(np.int64)
        x = rec[:, 1:].reshape(-1, 3, 32, 32).astype(np.float32) / 255.0
        return LabeledDataset(images=x, labels=labels)
    raise DatasetError(f"unknown dataset format {format!r}")


def sample_calibration_subset(ds, n, seed):
    """Draw n distinct images, deterministically in (seed, n)."""
    if n > len(ds):
        raise DatasetError(f"requested {n} of {len(ds)} images")
    idx = np.random.default_rng(seed).choice(len(ds), size=n, replace=False)
    return ds.subset(idx)
