"""Minimal idx (MNIST-style) file reading and writing, gzip-aware."""

import gzip
import struct
from pathlib import Path

import numpy as np

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801


def _open_maybe_gz(path, mode="rb"):
    path = Path(path)
    with open(path, "rb") as f:
        head = f.read(2)
    if head == b"\x1f\x8b":
        return gzip.open(path, mode)
    return open(path, mode)


def read_images(path):
    with _open_maybe_gz(path) as f:
        magic, n, rows, cols = struct.unpack(">IIII", f.read(16))
        if magic != IMAGES_MAGIC:
            raise ValueError(f"{path}: bad idx image magic 0x{magic:08x}")
        data = f.read(n * rows * cols)
    if len(data) != n * rows * cols:
        raise ValueError(f"{path}: truncated image payload")
    return np.frombuffer(data, np.uint8).reshape(n, rows, cols)


def read_labels(path):
    with _open_maybe_gz(path) as f:
        magic, n = struct.unpack(">II", f.read(8))
        if magic != LABELS_MAGIC:
            raise ValueError(f"{path}: bad idx label magic 0x{magic:08x}")
        data = f.read(n)
    if len(data) != n:
        raise ValueError(f"{path}: truncated label payload")
    return np.frombuffer(data, np.uint8).astype(np.int64)


def write_images(path, images, compress=True):
    images = np.ascontiguousarray(images, dtype=np.uint8)
    n, rows, cols = images.shape
    payload = struct.pack(">IIII", IMAGES_MAGIC, n, rows, cols) + images.tobytes()
    opener = gzip.open if compress else open
    with opener(path, "wb") as f:
        f.write(payload)


def write_labels(path, labels, compress=True):
    labels = np.ascontiguousarray(labels, dtype=np.uint8)
    payload = struct.pack(">II", LABELS_MAGIC, len(labels)) + labels.tobytes()
    opener = gzip.open if compress else open
    with opener(path, "wb") as f:
        f.write(payload)


def labels_path_for(images_path):
    """Derive the conventional labels filename from an images filename."""
    name = Path(images_path).name
    mate = name.replace("images-idx3", "labels-idx1").replace("images", "labels")
    if mate == name:
        raise ValueError(f"cannot derive labels filename from {name}")
    return Path(images_path).with_name(mate)
