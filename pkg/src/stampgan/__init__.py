"""stampgan: two-stage shape-and-texture object stamp generation."""

from stampgan.domain import (
    BoundingBox,
    ImageTensor,
    LatentVector,
    MaskTensor,
    StampResult,
    binarize,
    composite,
    cutout,
    rasterize_bbox,
)

__version__ = "0.1.0"

__all__ = [
    "BoundingBox",
    "ImageTensor",
    "LatentVector",
    "MaskTensor",
    "StampResult",
    "binarize",
    "composite",
    "cutout",
    "rasterize_bbox",
    "__version__",
]
