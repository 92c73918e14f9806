"""Instance records, filtering rules, and COCO-style ingestion.

Training instances keep only objects that are at least 1% of the image area,
form a single 4-connected component, and touch no image border. Each record
derives the tight bounding box of its mask; training examples add the cutout
images and the foreground texture.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np
from PIL import Image, ImageDraw
from scipy import ndimage

from stampgan.domain import (
    BoundingBox,
    EmptyMaskError,
    ImageTensor,
    MaskTensor,
    composite,
    cutout,
)

# 4-connectivity for the single-component rule
_CONN4 = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]])

MIN_AREA_FRACTION = 0.01


@dataclass(frozen=True)
class InstanceRecord:
    """One annotated object instance: image, binary mask, derived tight bbox."""

    image_id: str
    label: str
    image: ImageTensor
    mask: MaskTensor
    bbox: BoundingBox

    @classmethod
    def build(cls, image_id: str, label: str, image: ImageTensor, mask: MaskTensor):
        if not mask.binary:
            raise ValueError("instance masks must be binary")
        return cls(image_id=image_id, label=label, image=image, mask=mask,
                   bbox=tight_bbox(mask))


@dataclass(frozen=True)
class TrainingExample:
    """A record plus every derived tensor the two training stages consume."""

    image: ImageTensor        # i
    mask: MaskTensor          # m
    bbox: BoundingBox         # b
    image_boxcut: ImageTensor   # i_b, bbox region zeroed
    image_maskcut: ImageTensor  # i_m, mask region zeroed
    foreground: ImageTensor     # s = i * m, zero outside the mask


def tight_bbox(mask: MaskTensor) -> BoundingBox:
    """Minimal axis-aligned box containing all nonzero mask pixels."""
    ys, xs = np.nonzero(mask.data)
    if ys.size == 0:
        raise EmptyMaskError("cannot compute a bounding box for an empty mask")
    h, w = mask.data.shape
    r0, r1 = int(ys.min()), int(ys.max()) + 1
    c0, c1 = int(xs.min()), int(xs.max()) + 1
    vec = (c0 / w, r0 / h, c1 / w, r1 / h)
    return BoundingBox.from_vec(vec, h, w)


def _is_single_component(mask: np.ndarray) -> bool:
    _, n = ndimage.label(mask > 0, structure=_CONN4)
    return n == 1


def _touches_border(mask: np.ndarray) -> bool:
    return bool(mask[0, :].any() or mask[-1, :].any()
                or mask[:, 0].any() or mask[:, -1].any())


def passes_filters(mask: MaskTensor) -> bool:
    """The three retention rules applied to one instance mask."""
    arr = mask.data
    area = float(arr.sum())
    if area < MIN_AREA_FRACTION * arr.size:
        return False
    if not _is_single_component(arr):
        return False
    if _touches_border(arr):
        return False
    return True


def filter_instances(records: list[InstanceRecord]) -> list[InstanceRecord]:
    """Keep records whose masks satisfy all three rules. Idempotent."""
    return [r for r in records if passes_filters(r.mask)]


def make_example(record: InstanceRecord) -> TrainingExample:
    i, m, b = record.image, record.mask, record.bbox
    fg = ImageTensor(i.data * m.data[:, :, None])
    return TrainingExample(
        image=i, mask=m, bbox=b,
        image_boxcut=cutout(i, b.raster),
        image_maskcut=cutout(i, m),
        foreground=fg,
    )


def batch_order(n: int, batch_size: int, seed: int, epoch: int) -> list[np.ndarray]:
    """Deterministic shuffled batch indices for (seed, epoch)."""
    rng = np.random.default_rng([seed, epoch])
    perm = rng.permutation(n)
    return [perm[k:k + batch_size] for k in range(0, n, batch_size)]


# ---------------------------------------------------------------------------
# PNG round trips


def save_image_png(image: ImageTensor, path: str):
    Image.fromarray(image.to_uint8(), mode="RGB").save(path)


def save_mask_png(mask: MaskTensor, path: str):
    Image.fromarray(mask.to_uint8(), mode="L").save(path)


def load_image_png(path: str, size: int | None = None) -> ImageTensor:
    img = Image.open(path).convert("RGB")
    if size is not None and img.size != (size, size):
        img = img.resize((size, size), Image.BILINEAR)
    return ImageTensor.from_uint8(np.asarray(img))


def load_mask_png(path: str, size: int | None = None, threshold: float = 0.5) -> MaskTensor:
    img = Image.open(path).convert("L")
    if size is not None and img.size != (size, size):
        img = img.resize((size, size), Image.NEAREST)
    arr = np.asarray(img, dtype=np.float64) / 255.0
    return MaskTensor((arr > threshold).astype(np.float64), binary=True)


# ---------------------------------------------------------------------------
# Dataset directories (synthetic or ingested) share one manifest layout.


def write_dataset(out_dir: str, pairs: list[tuple[ImageTensor, MaskTensor]],
                  label: str, meta: dict):
    os.makedirs(os.path.join(out_dir, "images"), exist_ok=True)
    os.makedirs(os.path.join(out_dir, "masks"), exist_ok=True)
    entries = []
    for idx, (img, mask) in enumerate(pairs):
        img_rel = f"images/{idx:05d}.png"
        mask_rel = f"masks/{idx:05d}.png"
        save_image_png(img, os.path.join(out_dir, img_rel))
        save_mask_png(mask, os.path.join(out_dir, mask_rel))
        entries.append({"index": idx, "image": img_rel, "mask": mask_rel})
    manifest = {"label": label, "count": len(pairs), "meta": meta, "entries": entries}
    with open(os.path.join(out_dir, "manifest.json"), "w") as f:
        json.dump(manifest, f, indent=2)
    return manifest


def load_dataset(root: str, size: int | None = None) -> list[InstanceRecord]:
    with open(os.path.join(root, "manifest.json")) as f:
        manifest = json.load(f)
    records = []
    for entry in manifest["entries"]:
        img = load_image_png(os.path.join(root, entry["image"]), size=size)
        mask = load_mask_png(os.path.join(root, entry["mask"]), size=size)
        records.append(InstanceRecord.build(
            image_id=str(entry["index"]), label=manifest["label"],
            image=img, mask=mask))
    return records


# ---------------------------------------------------------------------------
# COCO-style annotation reading


def _decode_compressed_rle(counts: str, h: int, w: int) -> np.ndarray:
    """Decode the COCO compressed RLE string (5-bit varint with deltas)."""
    nums, i = [], 0
    while i < len(counts):
        x, k, more = 0, 0, True
        while more:
            c = ord(counts[i]) - 48
            x |= (c & 0x1F) << (5 * k)
            more = bool(c & 0x20)
            i += 1
            if not more and (c & 0x10):
                x |= -1 << (5 * k + 5)
            k += 1
        if len(nums) > 2:
            x += nums[-2]
        nums.append(x)
    return _runs_to_mask(nums, h, w)


def _runs_to_mask(runs: list[int], h: int, w: int) -> np.ndarray:
    flat = np.zeros(h * w, dtype=np.float64)
    pos, val = 0, 0.0
    for run in runs:
        if val:
            flat[pos:pos + run] = 1.0
        pos += run
        val = 1.0 - val
    # COCO RLE is column-major
    return flat.reshape((w, h)).T


def decode_segmentation(seg, h: int, w: int) -> np.ndarray:
    """Polygon list or RLE dict -> binary HxW array."""
    if isinstance(seg, dict):
        rh, rw = seg["size"]
        counts = seg["counts"]
        if isinstance(counts, str):
            mask = _decode_compressed_rle(counts, rh, rw)
        else:
            mask = _runs_to_mask(list(counts), rh, rw)
        if (rh, rw) != (h, w):
            raise ValueError(f"RLE size {(rh, rw)} does not match image {(h, w)}")
        return mask
    if isinstance(seg, list):
        canvas = Image.new("1", (w, h), 0)
        draw = ImageDraw.Draw(canvas)
        for poly in seg:
            if len(poly) >= 6:
                draw.polygon([tuple(poly[k:k + 2]) for k in range(0, len(poly), 2)], fill=1)
        return np.asarray(canvas, dtype=np.float64)
    raise ValueError(f"unsupported segmentation payload: {type(seg)!r}")


def load_coco_instances(annotation_path: str, images_dir: str, category: str,
                        size: int = 256) -> list[InstanceRecord]:
    """Read a COCO-style annotation file and emit per-instance records.

    Masks are decoded at native resolution, then image and mask are resized
    to a square ``size``. Filtering is the caller's job (``filter_instances``).
    """
    with open(annotation_path) as f:
        coco = json.load(f)
    cats = {c["id"]: c["name"] for c in coco.get("categories", [])}
    cat_ids = {cid for cid, name in cats.items() if name == category}
    if not cat_ids:
        raise ValueError(f"category {category!r} not present in {annotation_path}")
    images = {im["id"]: im for im in coco["images"]}

    records = []
    for ann in coco["annotations"]:
        if ann["category_id"] not in cat_ids or ann.get("iscrowd", 0):
            continue
        info = images[ann["image_id"]]
        mask_native = decode_segmentation(ann["segmentation"], info["height"], info["width"])
        if not mask_native.any():
            continue
        img = load_image_png(os.path.join(images_dir, info["file_name"]), size=size)
        mask_img = Image.fromarray((mask_native * 255).astype(np.uint8), mode="L")
        mask_img = mask_img.resize((size, size), Image.NEAREST)
        mask = MaskTensor((np.asarray(mask_img) > 127).astype(np.float64), binary=True)
        if not mask.data.any():
            continue
        records.append(InstanceRecord.build(
            image_id=f"{ann['image_id']}#{ann['id']}", label=category,
            image=img, mask=mask))
    return records


def reconstructs(example: TrainingExample) -> bool:
    """i_m recomposited with s under m gives back i (exact for binary m)."""
    rec = composite(example.image_maskcut, example.foreground, example.mask)
    return np.array_equal(rec.data, example.image.data)
