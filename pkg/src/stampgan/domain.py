"""Core value types and the compositing / cutout algebra.

Images are H x W x 3 float arrays in [-1, 1] (symmetric range to match tanh
generator heads), masks are H x W floats in [0, 1]. All pixel math here is
done in float64: the blend round-trip identities are bitwise-exact at that
precision, which float32 does not guarantee.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


class ShapeMismatchError(ValueError):
    """Operands do not share the same spatial dimensions."""


class InvalidBoxError(ValueError):
    """Bounding box coordinates are degenerate or out of range."""


class EmptyMaskError(ValueError):
    """An operation that needs nonzero mask support got an empty mask."""


def _as_float64(data) -> np.ndarray:
    arr = np.asarray(data, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError("array contains non-finite values")
    return arr


@dataclass(frozen=True)
class ImageTensor:
    """An RGB image, channel-last, values in [-1, 1]."""

    data: np.ndarray

    def __post_init__(self):
        arr = _as_float64(self.data)
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise ValueError(f"image must be HxWx3, got {arr.shape}")
        if arr.min() < -1.0 or arr.max() > 1.0:
            raise ValueError("image values must lie in [-1, 1]")
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @classmethod
    def from_uint8(cls, arr: np.ndarray) -> "ImageTensor":
        return cls(np.asarray(arr, dtype=np.float64) / 255.0 * 2.0 - 1.0)

    def to_uint8(self) -> np.ndarray:
        return np.rint((self.data + 1.0) / 2.0 * 255.0).astype(np.uint8)


@dataclass(frozen=True)
class MaskTensor:
    """A single-channel mask, values in [0, 1]; ``binary`` marks {0,1}-only."""

    data: np.ndarray
    binary: bool = field(default=False)

    def __post_init__(self):
        arr = _as_float64(self.data)
        if arr.ndim != 2:
            raise ValueError(f"mask must be HxW, got {arr.shape}")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise ValueError("mask values must lie in [0, 1]")
        is_binary = bool(np.all((arr == 0.0) | (arr == 1.0)))
        if self.binary and not is_binary:
            raise ValueError("mask flagged binary but contains fractional values")
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)
        object.__setattr__(self, "binary", is_binary)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @classmethod
    def from_uint8(cls, arr: np.ndarray) -> "MaskTensor":
        return cls(np.asarray(arr, dtype=np.float64) / 255.0)

    def to_uint8(self) -> np.ndarray:
        return np.rint(self.data * 255.0).astype(np.uint8)


@dataclass(frozen=True)
class BoundingBox:
    """Normalized (x1, y1, x2, y2) rectangle plus its rasterized binary mask."""

    vec: tuple[float, float, float, float]
    raster: MaskTensor

    def __post_init__(self):
        _validate_box_vec(self.vec)
        if not self.raster.binary:
            raise InvalidBoxError("bounding box raster must be binary")

    @classmethod
    def from_vec(cls, vec, height: int, width: int) -> "BoundingBox":
        vec = tuple(float(v) for v in vec)
        return cls(vec=vec, raster=rasterize_bbox(vec, height, width))

    @property
    def height(self) -> int:
        return self.raster.height

    @property
    def width(self) -> int:
        return self.raster.width


@dataclass(frozen=True)
class LatentVector:
    """A 1-D latent; ``dim`` must match the model the vector conditions."""

    values: np.ndarray

    def __post_init__(self):
        arr = _as_float64(self.values)
        if arr.ndim != 1 or arr.shape[0] < 1:
            raise ValueError(f"latent must be a nonempty vector, got shape {arr.shape}")
        arr.flags.writeable = False
        object.__setattr__(self, "values", arr)

    @property
    def dim(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class StampResult:
    """One generated stamp: mask, texture, composite and the latents used.

    The background is retained so the defining identity
    ``composite == composite(background, texture, mask)`` stays checkable.
    """

    background: ImageTensor
    mask: MaskTensor
    texture: ImageTensor
    composite: ImageTensor
    z_mask: LatentVector
    z_texture: LatentVector

    def __post_init__(self):
        recomputed = composite(self.background, self.texture, self.mask)
        if not np.array_equal(recomputed.data, self.composite.data):
            raise ValueError("composite does not equal blend of its parts")


def _validate_box_vec(vec) -> tuple[float, float, float, float]:
    if len(vec) != 4:
        raise InvalidBoxError(f"box vec must have 4 entries, got {len(vec)}")
    x1, y1, x2, y2 = (float(v) for v in vec)
    for v in (x1, y1, x2, y2):
        if not math.isfinite(v) or v < 0.0 or v > 1.0:
            raise InvalidBoxError(f"box coordinates must lie in [0, 1], got {vec}")
    if not (x1 < x2 and y1 < y2):
        raise InvalidBoxError(f"box must satisfy x1 < x2 and y1 < y2, got {vec}")
    return x1, y1, x2, y2


def _check_same_shape(a: np.ndarray, b: np.ndarray):
    if a.shape[:2] != b.shape[:2]:
        raise ShapeMismatchError(f"spatial shapes differ: {a.shape[:2]} vs {b.shape[:2]}")


def composite(i: ImageTensor, s: ImageTensor, m: MaskTensor) -> ImageTensor:
    """Per-pixel convex blend: background outside the mask, stamp inside."""
    _check_same_shape(i.data, s.data)
    _check_same_shape(i.data, m.data)
    w = m.data[:, :, None]
    return ImageTensor(i.data * (1.0 - w) + s.data * w)


def cutout(i: ImageTensor, m: MaskTensor) -> ImageTensor:
    """Zero out the masked region, leave the rest of the image unchanged."""
    _check_same_shape(i.data, m.data)
    return ImageTensor(i.data * (1.0 - m.data[:, :, None]))


def _snap(v: float) -> float:
    """Pull values a rounding error away from an integer back onto it,
    so coordinates of pixel-grid origin (k / size) rasterize losslessly."""
    r = round(v)
    return float(r) if abs(v - r) < 1e-9 else v


def rasterize_bbox(vec, height: int, width: int) -> MaskTensor:
    """Rasterize a normalized box onto the pixel grid.

    Half-open pixel intervals: start coordinates floor, end coordinates ceil,
    so the raster is area-monotone in the box and never empty for x1 < x2.
    """
    x1, y1, x2, y2 = _validate_box_vec(vec)
    c0, c1 = math.floor(_snap(x1 * width)), math.ceil(_snap(x2 * width))
    r0, r1 = math.floor(_snap(y1 * height)), math.ceil(_snap(y2 * height))
    c0, c1 = max(c0, 0), min(c1, width)
    r0, r1 = max(r0, 0), min(r1, height)
    if r0 >= r1 or c0 >= c1:
        raise InvalidBoxError(f"box {vec} rounds to zero area on a {height}x{width} grid")
    data = np.zeros((height, width), dtype=np.float64)
    data[r0:r1, c0:c1] = 1.0
    return MaskTensor(data, binary=True)


def binarize(m: MaskTensor, threshold: float = 0.5) -> MaskTensor:
    """Harden a soft mask: 1 where value exceeds the threshold, else 0."""
    if not (0.0 < threshold < 1.0):
        raise ValueError(f"threshold must lie in (0, 1), got {threshold}")
    return MaskTensor((m.data > threshold).astype(np.float64), binary=True)
