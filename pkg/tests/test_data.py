import json

import numpy as np
import pytest

from stampgan.data import (
    InstanceRecord,
    batch_order,
    decode_segmentation,
    filter_instances,
    load_coco_instances,
    load_dataset,
    make_example,
    passes_filters,
    reconstructs,
    tight_bbox,
)
from stampgan.domain import EmptyMaskError, ImageTensor, MaskTensor
from stampgan.synthetic import CLASS_PRESETS, SynthConfig, build_synthetic_dataset, synth_sample


def _blob_mask(n=100, r=20, cx=50, cy=50):
    ys, xs = np.mgrid[0:n, 0:n]
    return ((xs - cx) ** 2 + (ys - cy) ** 2 <= r * r).astype(np.float64)


def _record(mask_arr, label="t"):
    n = mask_arr.shape[0]
    img = ImageTensor(np.zeros((n, n, 3)))
    return InstanceRecord.build("x", label, img, MaskTensor(mask_arr, binary=True))


class TestFilters:
    def test_small_instance_excluded(self):
        # 50 nonzero pixels on a 100x100 image: 0.5% < 1%
        m = np.zeros((100, 100))
        m[40, 10:60] = 1.0
        assert not passes_filters(MaskTensor(m, binary=True))

    def test_two_components_excluded(self):
        m = _blob_mask() + _blob_mask(cx=20, cy=20, r=10)
        m = np.clip(m, 0, 1)
        assert not passes_filters(MaskTensor(m, binary=True))

    def test_diagonal_touch_counts_as_separate(self):
        # 8-connected but not 4-connected: must be excluded
        m = np.zeros((32, 32))
        m[4:16, 4:16] = 1.0
        m[16:28, 16:28] = 1.0
        assert not passes_filters(MaskTensor(m, binary=True))

    def test_border_touch_excluded(self):
        m = np.zeros((64, 64))
        m[0:30, 10:40] = 1.0
        assert not passes_filters(MaskTensor(m, binary=True))

    def test_centered_blob_retained(self):
        assert passes_filters(MaskTensor(_blob_mask(), binary=True))

    def test_filter_idempotent(self):
        records = [_record(_blob_mask()), _record(np.pad(np.ones((2, 2)), 40)[:84, :84])]
        once = filter_instances(records)
        assert filter_instances(once) == once
        assert len(once) == 1

    def test_bbox_superset_of_mask(self):
        for seed in range(20):
            _, mask = synth_sample(seed)
            rec = _record(mask.data)
            assert np.all(rec.bbox.raster.data >= rec.mask.data)


class TestTightBbox:
    def test_full_frame(self):
        b = tight_bbox(MaskTensor(np.ones((32, 32)), binary=True))
        assert b.vec == (0.0, 0.0, 1.0, 1.0)

    def test_single_center_pixel(self):
        m = np.zeros((64, 64))
        m[32, 32] = 1.0
        b = tight_bbox(MaskTensor(m, binary=True))
        assert b.vec == (32 / 64, 32 / 64, 33 / 64, 33 / 64)
        assert b.raster.data.sum() == 1
        assert b.raster.data[32, 32] == 1.0

    def test_empty_mask_raises(self):
        with pytest.raises(EmptyMaskError):
            tight_bbox(MaskTensor(np.zeros((8, 8)), binary=True))

    def test_raster_matches_support_bounds(self):
        rng = np.random.default_rng(0)
        for _ in range(30):
            n = int(rng.integers(17, 97))
            m = np.zeros((n, n))
            r0, c0 = rng.integers(0, n - 4, 2)
            r1 = int(rng.integers(r0 + 1, n))
            c1 = int(rng.integers(c0 + 1, n))
            m[r0:r1, c0:c1] = 1.0
            b = tight_bbox(MaskTensor(m, binary=True))
            assert np.array_equal(b.raster.data, m)


class TestMakeExample:
    def test_derived_fields(self):
        img, mask = synth_sample(3)
        ex = make_example(_record_from(img, mask))
        b = ex.bbox.raster.data[:, :, None]
        assert np.all(ex.image_boxcut.data * b == 0)
        assert np.array_equal(ex.image_boxcut.data * (1 - b), ex.image.data * (1 - b))
        assert np.all(ex.foreground.data * (1 - mask.data[:, :, None]) == 0)
        assert reconstructs(ex)


def _record_from(img, mask):
    return InstanceRecord.build("s", "mixed", img, mask)


class TestSynthetic:
    def test_deterministic(self):
        a_img, a_mask = synth_sample(42)
        b_img, b_mask = synth_sample(42)
        assert np.array_equal(a_img.data, b_img.data)
        assert np.array_equal(a_mask.data, b_mask.data)

    def test_samples_pass_filters(self):
        assert all(passes_filters(synth_sample(s)[1]) for s in range(1000))

    def test_area_bounds_per_family(self):
        cfg = CLASS_PRESETS["striped"]
        for seed in range(100):
            _, mask = synth_sample(seed, cfg)
            area = mask.data.mean()
            assert cfg.min_area <= area <= cfg.max_area

    def test_statistics_stable_across_seeds(self):
        def stats(base):
            areas, aspects = [], []
            for s in range(base, base + 1000):
                _, mask = synth_sample(s)
                areas.append(mask.data.mean())
                b = tight_bbox(mask)
                x1, y1, x2, y2 = b.vec
                aspects.append((x2 - x1) / (y2 - y1))
            return np.mean(areas), np.mean(aspects)

        a1, p1 = stats(0)
        a2, p2 = stats(1_000_000)
        assert abs(a1 - a2) / a1 < 0.05
        assert abs(p1 - p2) / p1 < 0.05

    def test_brightness_correlates_with_background(self):
        # lighting cue must be learnable: fg brightness tracks local bg
        locals_, fgs = [], []
        for seed in range(300):
            img, mask = synth_sample(seed)
            m = mask.data[:, :, None]
            fg_mean = (img.data * m).sum() / (3 * mask.data.sum())
            bg_mean = (img.data * (1 - m)).sum() / (3 * (1 - mask.data).sum())
            locals_.append(bg_mean)
            fgs.append(fg_mean)
        r = np.corrcoef(locals_, fgs)[0, 1]
        assert r > 0.5

    def test_dataset_build_and_load(self, tmp_path):
        out = tmp_path / "ds"
        manifest = build_synthetic_dataset(str(out), count=6, seed=9, class_name="mixed")
        assert manifest["count"] == 6
        records = load_dataset(str(out))
        assert len(records) == 6
        assert all(r.label == "mixed" for r in records)
        assert all(r.mask.binary for r in records)
        # PNG round trip preserves the binary mask exactly
        _, mask = synth_sample(9)
        assert np.array_equal(records[0].mask.data, mask.data)


class TestBatchOrder:
    def test_deterministic_per_seed_epoch(self):
        a = batch_order(10, 4, seed=1, epoch=2)
        b = batch_order(10, 4, seed=1, epoch=2)
        assert all(np.array_equal(x, y) for x, y in zip(a, b))

    def test_different_epochs_differ(self):
        a = np.concatenate(batch_order(32, 4, seed=1, epoch=0))
        b = np.concatenate(batch_order(32, 4, seed=1, epoch=1))
        assert not np.array_equal(a, b)

    def test_covers_all_indices(self):
        flat = np.sort(np.concatenate(batch_order(13, 4, seed=0, epoch=0)))
        assert np.array_equal(flat, np.arange(13))


class TestCocoReader:
    def test_uncompressed_rle(self):
        # column-major runs: 2 zeros, 3 ones, rest zeros on a 3x3 grid
        seg = {"size": [3, 3], "counts": [2, 3, 4]}
        mask = decode_segmentation(seg, 3, 3)
        expected = np.zeros((3, 3))
        expected[2, 0] = 1.0
        expected[0, 1] = 1.0
        expected[1, 1] = 1.0
        assert np.array_equal(mask, expected)

    def test_compressed_rle_hand_encoded(self):
        from stampgan.data import _decode_compressed_rle
        # first three counts are stored raw: "234" -> runs [2, 3, 4]
        direct = decode_segmentation({"size": [3, 3], "counts": [2, 3, 4]}, 3, 3)
        assert np.array_equal(_decode_compressed_rle("234", 3, 3), direct)
        # from the 4th count on, deltas: runs [2,3,4,5] -> last char 5-3=2
        direct = decode_segmentation({"size": [7, 2], "counts": [2, 3, 4, 5]}, 7, 2)
        assert np.array_equal(_decode_compressed_rle("2342", 7, 2), direct)
        # negative delta uses the 0x10 sign bit: 3-5=-2 encodes to chr(30+48)
        direct = decode_segmentation({"size": [13, 2], "counts": [10, 5, 8, 3]}, 13, 2)
        assert np.array_equal(_decode_compressed_rle(":5" + "8" + chr(30 + 48), 13, 2), direct)
        # multi-character value: 40 = 8 + 32continuation, then 1 -> "X1"
        direct = decode_segmentation({"size": [41, 1], "counts": [40, 1]}, 41, 1)
        assert np.array_equal(_decode_compressed_rle("X11", 41, 1), direct)

    def test_polygon(self):
        seg = [[1.0, 1.0, 6.0, 1.0, 6.0, 6.0, 1.0, 6.0]]
        mask = decode_segmentation(seg, 8, 8)
        assert mask[3, 3] == 1.0
        assert mask[0, 0] == 0.0
        assert mask.sum() >= 25

    def test_load_coco_instances(self, tmp_path):
        from stampgan.data import save_image_png
        img, mask = synth_sample(4, SynthConfig(size=32))
        img_path = tmp_path / "img0.png"
        save_image_png(img, str(img_path))
        ys, xs = np.nonzero(mask.data)
        # encode the synthetic mask as uncompressed column-major RLE
        flat = mask.data.T.reshape(-1)
        runs, current, count = [], 0.0, 0
        for v in flat:
            if v == current:
                count += 1
            else:
                runs.append(count)
                current, count = v, 1
        runs.append(count)
        coco = {
            "images": [{"id": 1, "file_name": "img0.png", "height": 32, "width": 32}],
            "annotations": [{"id": 10, "image_id": 1, "category_id": 7,
                             "segmentation": {"size": [32, 32], "counts": runs}}],
            "categories": [{"id": 7, "name": "widget"}],
        }
        ann_path = tmp_path / "ann.json"
        ann_path.write_text(json.dumps(coco))
        records = load_coco_instances(str(ann_path), str(tmp_path), "widget", size=32)
        assert len(records) == 1
        assert np.array_equal(records[0].mask.data, mask.data)
        assert records[0].label == "widget"

    def test_unknown_category_raises(self, tmp_path):
        ann_path = tmp_path / "ann.json"
        ann_path.write_text(json.dumps({"images": [], "annotations": [], "categories": []}))
        with pytest.raises(ValueError):
            load_coco_instances(str(ann_path), str(tmp_path), "widget")
