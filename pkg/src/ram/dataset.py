"""MNIST IDX loading and the translated/rotated/noisy canvas augmentation."""

from __future__ import annotations

import gzip
import os
import struct
from dataclasses import dataclass
from typing import Iterator, List, Sequence

import numpy as np
from scipy import ndimage

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801
DIGIT_SIZE = 28

TRAIN_FILES = ("train-images-idx3-ubyte.gz", "train-labels-idx1-ubyte.gz")
TEST_FILES = ("t10k-images-idx3-ubyte.gz", "t10k-labels-idx1-ubyte.gz")


class IdxFormatError(ValueError):
    """Malformed IDX header (wrong magic number or dimensions)."""


class IdxConsistencyError(ValueError):
    """Image and label files disagree on the sample count."""


class ConfigError(ValueError):
    """Invalid configuration value."""


@dataclass
class ImageSample:
    pixels: np.ndarray  # (H, W) float64 in [0, 1]
    label: int


@dataclass(frozen=True)
class AugmentConfig:
    canvas_size: int = 60
    rotation_max: float = 15.0
    pixel_noise_std: float = 0.1
    seed: int = 0

    def validate(self) -> "AugmentConfig":
        if self.canvas_size < DIGIT_SIZE:
            raise ConfigError(f"canvas_size {self.canvas_size} < digit size {DIGIT_SIZE}")
        if self.rotation_max < 0:
            raise ConfigError("rotation_max must be >= 0")
        if self.pixel_noise_std < 0:
            raise ConfigError("pixel_noise_std must be >= 0")
        return self


def _open(path):
    with open(path, "rb") as fh:
        head = fh.read(2)
    return gzip.open(path, "rb") if head == b"\x1f\x8b" else open(path, "rb")


def _read_idx(path, magic: int, ndim: int) -> np.ndarray:
    with _open(path) as fh:
        header = fh.read(4)
        if len(header) < 4:
            raise IdxFormatError(f"{path}: truncated header")
        (found,) = struct.unpack(">I", header)
        if found != magic:
            raise IdxFormatError(f"{path}: magic 0x{found:08x}, expected 0x{magic:08x}")
        raw = fh.read(4 * ndim)
        if len(raw) < 4 * ndim:
            raise IdxFormatError(f"{path}: truncated dimensions")
        dims = struct.unpack(">" + "I" * ndim, raw)
        data = np.frombuffer(fh.read(), dtype=np.uint8)
    if data.size != int(np.prod(dims)):
        raise IdxFormatError(f"{path}: payload of {data.size} bytes does not match dims {dims}")
    return data.reshape(dims)


def load_idx_arrays(images_path, labels_path) -> tuple[np.ndarray, np.ndarray]:
    """Load an IDX image/label pair as ``(N, H, W)`` floats in [0, 1] and ``(N,)`` ints.

    Gzipped files are detected by their magic bytes, so both ``*.gz`` and raw
    ``*-ubyte`` files work.
    """
    images = _read_idx(images_path, IMAGES_MAGIC, 3)
    labels = _read_idx(labels_path, LABELS_MAGIC, 1)
    if images.shape[0] != labels.shape[0]:
        raise IdxConsistencyError(
            f"{images.shape[0]} images but {labels.shape[0]} labels"
        )
    return images.astype(np.float64) / 255.0, labels.astype(np.int64)


def load_idx(images_path, labels_path) -> List[ImageSample]:
    images, labels = load_idx_arrays(images_path, labels_path)
    return [ImageSample(img, int(lab)) for img, lab in zip(images, labels)]


def write_idx(images: np.ndarray, labels: np.ndarray, images_path, labels_path) -> None:
    """Write uint8 ``(N, H, W)`` images and ``(N,)`` labels as IDX (gzipped if the path ends in .gz)."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    for path, magic, arr in ((images_path, IMAGES_MAGIC, images), (labels_path, LABELS_MAGIC, labels)):
        opener = gzip.open if str(path).endswith(".gz") else open
        with opener(path, "wb") as fh:
            fh.write(struct.pack(">I", magic))
            fh.write(struct.pack(">" + "I" * arr.ndim, *arr.shape))
            fh.write(arr.tobytes())


def load_split(data_dir, split: str = "train", limit: int | None = None):
    """Load the ``train`` or ``test`` split from a directory of standard MNIST file names."""
    names = TRAIN_FILES if split == "train" else TEST_FILES
    paths = []
    for name in names:
        path = os.path.join(data_dir, name)
        if not os.path.exists(path) and os.path.exists(path[:-3]):
            path = path[:-3]
        paths.append(path)
    images, labels = load_idx_arrays(*paths)
    if limit is not None:
        images, labels = images[:limit], labels[:limit]
    return images, labels


def rotate_digit(digit: np.ndarray, angle: float) -> np.ndarray:
    """Rotate about the patch center with bilinear resampling; outside samples map to 0."""
    if angle == 0.0:
        return digit.copy()
    out = ndimage.rotate(digit, angle, reshape=False, order=1, mode="constant", cval=0.0)
    return np.clip(out, 0.0, 1.0)


def augment(sample: ImageSample, cfg: AugmentConfig, rng: np.random.Generator,
            offset: tuple[int, int] | None = None) -> ImageSample:
    """Rotate, translate onto a ``canvas_size`` square, add Gaussian pixel noise, clamp.

    ``offset`` (row, col) of the digit's top-left corner may be forced; by
    default it is drawn uniformly so the whole 28x28 box stays on the canvas.
    """
    cfg.validate()
    digit = np.asarray(sample.pixels, dtype=np.float64)
    if digit.shape != (DIGIT_SIZE, DIGIT_SIZE):
        raise ConfigError(f"expected a {DIGIT_SIZE}x{DIGIT_SIZE} digit, got {digit.shape}")
    c = cfg.canvas_size
    angle = rng.uniform(-cfg.rotation_max, cfg.rotation_max) if cfg.rotation_max > 0 else 0.0
    digit = rotate_digit(digit, angle)
    if offset is None:
        top, left = rng.integers(0, c - DIGIT_SIZE + 1, size=2)
    else:
        top, left = offset
    canvas = np.zeros((c, c))
    canvas[top:top + DIGIT_SIZE, left:left + DIGIT_SIZE] = digit
    if cfg.pixel_noise_std > 0:
        canvas += rng.normal(0.0, cfg.pixel_noise_std, size=canvas.shape)
    np.clip(canvas, 0.0, 1.0, out=canvas)
    return ImageSample(canvas, sample.label)


def augment_array(images: np.ndarray, cfg: AugmentConfig, rng: np.random.Generator) -> np.ndarray:
    """Augment a stack of 28x28 digits into ``(N, canvas, canvas)``; same draws as calling :func:`augment` in order."""
    out = np.empty((len(images), cfg.canvas_size, cfg.canvas_size))
    for i, img in enumerate(images):
        out[i] = augment(ImageSample(img, 0), cfg, rng).pixels
    return out


def batches(samples: Sequence, batch_size: int, rng: np.random.Generator) -> Iterator[np.ndarray]:
    """Yield index arrays for one epoch: a fresh permutation cut into ``batch_size`` chunks.

    The last partial batch is kept. Works for any sized collection; callers
    index their arrays with the yielded indices.
    """
    n = len(samples)
    if n == 0:
        raise ValueError("cannot batch an empty dataset")
    if batch_size < 1:
        raise ConfigError("batch_size must be >= 1")
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]
