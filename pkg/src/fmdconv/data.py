"""Desk-scale datasets: a procedural synthetic task plus a binary file format.

The synthetic task is oriented-bar classification: class c draws a soft bar
through the image at angle pi * c / classes, with per-sample center jitter,
amplitude jitter and Gaussian pixel noise.  It is linearly separable well
above chance on raw pixels, so a small CNN can master it in a few epochs,
and it is fully deterministic: the same seed reproduces the tensors bit for
bit on any platform.

Dataset files are little-endian binary:

    magic  b"FMDD"  (4 bytes)
    uint32 version (currently 1)
    uint32 M, C, H, W, class_count
    M      uint8 labels
    M*C*H*W float32 pixels, NCHW order

Pixels are widened to float64 on load to match the tensor substrate.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .tensor import philox_rng

__all__ = ["Dataset", "make_synthetic_dataset", "save_dataset", "load_dataset"]

MAGIC = b"FMDD"
VERSION = 1
_HEADER = struct.Struct("<4sIIIIII")


@dataclass
class Dataset:
    """Images [M, C, H, W] float64 with integer labels in [0, class_count)."""

    images: np.ndarray
    labels: np.ndarray
    class_count: int
    split: str = "train"

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 4:
            raise ValueError(f"images must be [M, C, H, W], got ndim={self.images.ndim}")
        if self.labels.shape != (self.images.shape[0],):
            raise ValueError(
                f"labels shape {self.labels.shape} does not match {self.images.shape[0]} images"
            )
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.class_count):
            raise ValueError(f"labels must lie in [0, {self.class_count})")

    def __len__(self) -> int:
        return self.images.shape[0]


def make_synthetic_dataset(seed: int, classes: int = 4, per_class: int = 150,
                           channels: int = 1, height: int = 16, width: int = 16,
                           split: str = "train", noise: float = 0.25,
                           jitter: float = 2.0) -> Dataset:
    """Deterministic oriented-bar images, ``per_class`` samples per class."""
    if min(classes, per_class, channels, height, width) < 1:
        raise ValueError("all dataset dimensions must be positive")
    rng = philox_rng(seed)
    rows = np.arange(height, dtype=np.float64)[:, None]
    cols = np.arange(width, dtype=np.float64)[None, :]
    sigma = 1.6
    images = np.empty((classes * per_class, channels, height, width))
    labels = np.empty(classes * per_class, dtype=np.int64)
    idx = 0
    for c in range(classes):
        theta = np.pi * c / classes
        for _ in range(per_class):
            cy = (height - 1) / 2.0 + rng.uniform(-jitter, jitter)
            cx = (width - 1) / 2.0 + rng.uniform(-jitter, jitter)
            amp = 1.0 + rng.uniform(-0.15, 0.15)
            # perpendicular distance to the bar line through (cy, cx) at angle theta
            dist = (rows - cy) * (-np.sin(theta)) + (cols - cx) * np.cos(theta)
            bar = amp * np.exp(-(dist * dist) / (2.0 * sigma * sigma))
            for ch in range(channels):
                images[idx, ch] = bar + rng.normal(0.0, noise, size=(height, width))
            labels[idx] = c
            idx += 1
    return Dataset(images=images, labels=labels, class_count=classes, split=split)


def save_dataset(path, ds: Dataset) -> None:
    if ds.class_count > 255:
        raise ValueError("file format stores labels as single bytes (class_count <= 255)")
    m, c, h, w = ds.images.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, m, c, h, w, ds.class_count))
        fh.write(ds.labels.astype(np.uint8).tobytes())
        fh.write(ds.images.astype("<f4").tobytes())


def load_dataset(path, split: str = "train") -> Dataset:
    with open(path, "rb") as fh:
        header = fh.read(_HEADER.size)
        if len(header) != _HEADER.size:
            raise ValueError(f"{path}: truncated header")
        magic, version, m, c, h, w, class_count = _HEADER.unpack(header)
        if magic != MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
        if version != VERSION:
            raise ValueError(f"{path}: unsupported version {version}")
        labels = np.frombuffer(fh.read(m), dtype=np.uint8)
        if labels.size != m:
            raise ValueError(f"{path}: truncated label block")
        pixels = np.frombuffer(fh.read(m * c * h * w * 4), dtype="<f4")
        if pixels.size != m * c * h * w:
            raise ValueError(f"{path}: truncated pixel block")
    images = pixels.astype(np.float64).reshape(m, c, h, w)
    return Dataset(images=images, labels=labels.astype(np.int64),
                   class_count=class_count, split=split)
