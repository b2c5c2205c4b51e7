"""
Synthetic-Shapes Dataset

10-class 3×32×32 corpus of coloured geometric primitives on noisy
backgrounds, plus the binary file formats used to store it:

    images: "SVDD", u32 version=1, u32 N, u32 C, u32 H, u32 W, N·C·H·W bytes
    labels: "SVDL", u32 version=1, u32 N, N bytes

All integers little-endian.
"""

import logging
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, Optional, Tuple, Union

import numpy as np

from ..core.container import atomic_write_bytes
from ..core.exceptions import (
    BadMagicError,
    DatasetError,
    DimensionOverflowError,
    LabelRangeError,
    TruncatedFileError,
    UnsupportedVersionError,
)

logger = logging.getLogger(__name__)

IMAGES_MAGIC = b"SVDD"
LABELS_MAGIC = b"SVDL"
FORMAT_VERSION = 1
MAX_DIM = 4096
MAX_PIXELS = 1 << 32

NUM_CLASSES = 10
IMAGE_SHAPE = (3, 32, 32)
SPLIT_STREAMS = {"train": 0, "test": 1}


@dataclass
class Dataset:
    """Images as uint8 N×C×H×W in [0, 255] plus integer class ids"""
    images: np.ndarray
    labels: np.ndarray
    split: str = "train"
    num_classes: int = NUM_CLASSES

    def __post_init__(self):
        self.images = np.ascontiguousarray(self.images, dtype=np.uint8)
        self.labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        if self.images.ndim != 4:
            raise DatasetError(f"images must be N×C×H×W, got shape {self.images.shape}")
        if len(self.images) == 0:
            raise DatasetError("dataset is empty")
        if self.labels.shape != (len(self.images),):
            raise DatasetError(f"{len(self.images)} images but labels have shape {self.labels.shape}")
        if self.labels.min() < 0 or self.labels.max() >= self.num_classes:
            raise LabelRangeError(
                f"labels must lie in [0, {self.num_classes}), got max {int(self.labels.max())}"
            )

    def __len__(self) -> int:
        return len(self.images)

    @property
    def image_shape(self) -> Tuple[int, int, int]:
        return tuple(self.images.shape[1:])

    def subset(self, count: int) -> "Dataset":
        return Dataset(self.images[:count], self.labels[:count], self.split, self.num_classes)

    def float_images(self, dtype=np.float32) -> np.ndarray:
        return self.images.astype(dtype)


# =============================================================================
# Generator
# =============================================================================

def _shape_masks() -> Dict[int, Callable[[np.ndarray, np.ndarray, float], np.ndarray]]:
    def circle(dy, dx, r):
        return dy ** 2 + dx ** 2 <= r ** 2

    def square(dy, dx, r):
        return (np.abs(dy) <= 0.8 * r) & (np.abs(dx) <= 0.8 * r)

    def triangle(dy, dx, r):
        return (dy >= -r) & (dy <= r) & (np.abs(dx) <= (dy + r) / 2)

    def plus(dy, dx, r):
        arm = r / 3
        return ((np.abs(dy) <= arm) & (np.abs(dx) <= r)) | ((np.abs(dx) <= arm) & (np.abs(dy) <= r))

    def ring(dy, dx, r):
        d2 = dy ** 2 + dx ** 2
        return (d2 <= r ** 2) & (d2 >= (0.55 * r) ** 2)

    def hbar(dy, dx, r):
        return (np.abs(dy) <= r / 3.5) & (np.abs(dx) <= 1.2 * r)

    def vbar(dy, dx, r):
        return (np.abs(dx) <= r / 3.5) & (np.abs(dy) <= 1.2 * r)

    def diamond(dy, dx, r):
        return np.abs(dy) + np.abs(dx) <= r

    def cross(dy, dx, r):
        inside = np.maximum(np.abs(dy), np.abs(dx)) <= r
        return inside & ((np.abs(dx - dy) <= r / 3) | (np.abs(dx + dy) <= r / 3))

    def frame(dy, dx, r):
        m = np.maximum(np.abs(dy), np.abs(dx))
        return (m <= r) & (m >= 0.6 * r)

    return dict(enumerate([circle, square, triangle, plus, ring, hbar, vbar, diamond, cross, frame]))


_MASKS = _shape_masks()


def _render(rng: np.random.Generator, label: int, shape: Tuple[int, int, int]) -> np.ndarray:
    channels, height, width = shape
    radius = rng.uniform(0.22, 0.34) * min(height, width)
    margin = int(np.ceil(radius * 1.2)) + 1
    cy = rng.uniform(margin, height - 1 - margin) if height - 1 - margin > margin else (height - 1) / 2
    cx = rng.uniform(margin, width - 1 - margin) if width - 1 - margin > margin else (width - 1) / 2
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    mask = _MASKS[label](yy - cy, xx - cx, radius)

    background = rng.uniform(0, 80, size=(channels, 1, 1))
    foreground = rng.uniform(150, 255, size=(channels, 1, 1))
    image = np.where(mask[None], foreground, background)
    image = image + rng.normal(0.0, 10.0, size=image.shape)
    return np.clip(np.rint(image), 0, 255).astype(np.uint8)


def generate_dataset(seed: int, n: int, split: str = "train",
                     image_shape: Tuple[int, int, int] = IMAGE_SHAPE) -> Dataset:
    """Deterministic, class-balanced synthetic-shapes dataset"""
    if n <= 0:
        raise DatasetError("dataset size must be positive")
    rng = np.random.default_rng([seed, SPLIT_STREAMS.get(split, len(SPLIT_STREAMS))])
    labels = rng.permutation(np.arange(n) % NUM_CLASSES)
    images = np.stack([_render(rng, int(label), image_shape) for label in labels])
    logger.info(f"Generated {split} split: {n} images, seed={seed}")
    return Dataset(images, labels, split)


# =============================================================================
# File format
# =============================================================================

def encode_images(images: np.ndarray) -> bytes:
    n, c, h, w = images.shape
    return IMAGES_MAGIC + struct.pack("<IIIII", FORMAT_VERSION, n, c, h, w) + images.astype(np.uint8).tobytes()


def encode_labels(labels: np.ndarray) -> bytes:
    return LABELS_MAGIC + struct.pack("<II", FORMAT_VERSION, len(labels)) + labels.astype(np.uint8).tobytes()


def _check_header(data: bytes, magic: bytes, header_fmt: str, what: str) -> Tuple[int, ...]:
    size = len(magic) + struct.calcsize(header_fmt)
    if data[:len(magic)] != magic:
        raise BadMagicError(f"{what}: bad magic {data[:len(magic)]!r}, expected {magic!r}")
    if len(data) < size:
        raise TruncatedFileError(f"{what}: header truncated ({len(data)} bytes)")
    fields = struct.unpack(header_fmt, data[len(magic):size])
    if fields[0] != FORMAT_VERSION:
        raise UnsupportedVersionError(f"{what}: unsupported version {fields[0]}")
    return fields[1:]


def decode_images(data: bytes) -> np.ndarray:
    n, c, h, w = _check_header(data, IMAGES_MAGIC, "<IIIII", "images file")
    if max(c, h, w) > MAX_DIM or n * c * h * w > MAX_PIXELS:
        raise DimensionOverflowError(f"images file: implausible dims N={n} C={c} H={h} W={w}")
    offset = len(IMAGES_MAGIC) + 20
    expected = n * c * h * w
    if len(data) - offset < expected:
        raise TruncatedFileError(f"images file: payload truncated, expected {expected} bytes, got {len(data) - offset}")
    return np.frombuffer(data, dtype=np.uint8, count=expected, offset=offset).reshape(n, c, h, w).copy()


def decode_labels(data: bytes) -> np.ndarray:
    (n,) = _check_header(data, LABELS_MAGIC, "<II", "labels file")
    if n > MAX_PIXELS:
        raise DimensionOverflowError(f"labels file: implausible count {n}")
    offset = len(LABELS_MAGIC) + 8
    if len(data) - offset < n:
        raise TruncatedFileError(f"labels file: payload truncated, expected {n} bytes, got {len(data) - offset}")
    return np.frombuffer(data, dtype=np.uint8, count=n, offset=offset).astype(np.int64)


def dataset_paths(directory: Union[str, Path], split: str) -> Tuple[Path, Path]:
    directory = Path(directory)
    return directory / f"{split}_images.bin", directory / f"{split}_labels.bin"


def save_dataset(dataset: Dataset, directory: Union[str, Path]) -> Tuple[Path, Path]:
    images_path, labels_path = dataset_paths(directory, dataset.split)
    atomic_write_bytes(images_path, encode_images(dataset.images))
    atomic_write_bytes(labels_path, encode_labels(dataset.labels))
    logger.info(f"Wrote {dataset.split} split ({len(dataset)} images) to {images_path.parent}")
    return images_path, labels_path


def load_dataset(images_path: Union[str, Path], labels_path: Optional[Union[str, Path]] = None,
                 split: Optional[str] = None, num_classes: int = NUM_CLASSES) -> Dataset:
    """Read an images/labels file pair; the labels path defaults to the sibling file"""
    images_path = Path(images_path)
    if labels_path is None:
        labels_path = images_path.with_name(images_path.name.replace("_images", "_labels"))
    labels_path = Path(labels_path)
    for path in (images_path, labels_path):
        if not path.exists():
            raise DatasetError(f"dataset file not found: {path}")
    images = decode_images(images_path.read_bytes())
    labels = decode_labels(labels_path.read_bytes())
    split = split or images_path.name.split("_images")[0]
    return Dataset(images, labels, split, num_classes)
