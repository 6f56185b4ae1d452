"""Foveated multi-scale glimpse sensor.

Scale ``s`` (1-based) crops a square of side ``B * 2**(s-1)`` around the
fixation and mean-pools it down to ``B x B``, so the first scale is full
resolution and every further scale is twice as blurry.  Locations live in
``[-1, 1]^2`` with ``(-1, -1)`` the top-left pixel and ``(1, 1)`` the
bottom-right one.  Everything outside the image reads as 0.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List

import numpy as np


class GeometryError(ValueError):
    """A patch side that is not an integer multiple of the bandwidth."""


@dataclass(frozen=True)
class Location:
    x: float
    y: float

    def __post_init__(self):
        object.__setattr__(self, "x", float(np.clip(self.x, -1.0, 1.0)))
        object.__setattr__(self, "y", float(np.clip(self.y, -1.0, 1.0)))

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y])


@dataclass(frozen=True)
class GlimpseConfig:
    num_glimpses: int = 4
    num_scales: int = 4
    bandwidth: int = 12

    def __post_init__(self):
        for name in ("num_glimpses", "num_scales", "bandwidth"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1")

    def sensor_size(self) -> int:
        return self.bandwidth ** 2 * self.num_scales

    def scale_sides(self) -> List[int]:
        return [self.bandwidth * 2 ** s for s in range(self.num_scales)]


@dataclass
class RetinaObservation:
    patches: List[np.ndarray]  # S arrays of B x B, smallest scale first
    flat: np.ndarray

    @classmethod
    def from_patches(cls, patches):
        return cls(list(patches), np.concatenate([p.ravel() for p in patches]))


def pixel_center(loc, height: int, width: int):
    """Integer pixel (row, col) of normalized location(s); ties round up.

    ``loc`` is a :class:`Location` or an ``(..., 2)`` array of ``(x, y)``.
    """
    xy = loc.as_array() if isinstance(loc, Location) else np.asarray(loc, dtype=np.float64)
    if not np.all(np.isfinite(xy)):
        raise GeometryError("location is not finite")
    xy = np.clip(xy, -1.0, 1.0)
    col = np.floor((xy[..., 0] + 1.0) / 2.0 * (width - 1) + 0.5).astype(np.int64)
    row = np.floor((xy[..., 1] + 1.0) / 2.0 * (height - 1) + 0.5).astype(np.int64)
    return row, col


def extract_patch(image: np.ndarray, center: Location, side: int) -> np.ndarray:
    """Crop a ``side x side`` window around ``center``, zero-filled off-image."""
    if side < 1:
        raise ValueError("side must be >= 1")
    h, w = image.shape
    row, col = pixel_center(center, h, w)
    top, left = int(row) - side // 2, int(col) - side // 2
    out = np.zeros((side, side), dtype=image.dtype)
    r0, r1 = max(top, 0), min(top + side, h)
    c0, c1 = max(left, 0), min(left + side, w)
    if r0 < r1 and c0 < c1:
        out[r0 - top:r1 - top, c0 - left:c1 - left] = image[r0:r1, c0:c1]
    return out


def downsample(patch: np.ndarray, bandwidth: int) -> np.ndarray:
    """Mean-pool a ``kB x kB`` patch to ``B x B``."""
    side = patch.shape[-1]
    if patch.shape[-2] != side or side % bandwidth:
        raise GeometryError(f"patch {patch.shape} is not a multiple of bandwidth {bandwidth}")
    k = side // bandwidth
    if k == 1:
        return patch.copy()
    lead = patch.shape[:-2]
    return patch.reshape(*lead, bandwidth, k, bandwidth, k).mean(axis=(-3, -1))


def retina(image: np.ndarray, loc: Location, cfg: GlimpseConfig) -> RetinaObservation:
    patches = [downsample(extract_patch(image, loc, side), cfg.bandwidth)
               for side in cfg.scale_sides()]
    return RetinaObservation.from_patches(patches)


def _block_membership(start: np.ndarray, k: int, bandwidth: int, length: int) -> np.ndarray:
    """``(N, B, length)`` 0/1 matrix: pixel ``r`` belongs to block ``i`` of window ``n``.

    Window ``n`` covers ``[start_n, start_n + k*B)``; pixels outside the image
    simply never appear, which is the same as zero padding.
    """
    rel = np.arange(length)[None, :] - start[:, None]                 # (N, length)
    inside = (rel >= 0) & (rel < k * bandwidth)
    block = np.where(inside, rel // k, -1)
    return (block[:, None, :] == np.arange(bandwidth)[None, :, None]).astype(np.float64)


def retina_batch(images: np.ndarray, locs: np.ndarray, cfg: GlimpseConfig) -> np.ndarray:
    """Vectorized :func:`retina` over a batch.

    ``images`` is ``(N, H, W)``, ``locs`` is ``(N, 2)``; returns the flat
    observations as ``(N, B*B*S)``.  Each scale is two products with block
    membership matrices, so the cost does not depend on how far the outer
    patches extend past the canvas.
    """
    n, h, w = images.shape
    b = cfg.bandwidth
    row, col = pixel_center(locs, h, w)
    out = np.empty((n, cfg.sensor_size()), dtype=np.float64)
    for s, side in enumerate(cfg.scale_sides()):
        k = side // b
        rows = _block_membership(row - side // 2, k, b, h)             # (N, B, H)
        cols = _block_membership(col - side // 2, k, b, w)             # (N, B, W)
        sums = rows @ images @ cols.transpose(0, 2, 1)                 # (N, B, B)
        out[:, s * b * b:(s + 1) * b * b] = (sums / (k * k)).reshape(n, b * b)
    return out


def write_pgm(path, patch: np.ndarray, upscale: int = 1) -> None:
    """Write a [0, 1] array as a binary 8-bit PGM, optionally nearest-upscaled."""
    img = np.kron(np.clip(patch, 0.0, 1.0), np.ones((upscale, upscale)))
    data = np.round(img * 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n255\n" % (data.shape[1], data.shape[0]))
        fh.write(data.tobytes())
