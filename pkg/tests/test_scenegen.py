"""Tests for scene generation, the dataset file format, and batching."""

import os

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from slp.scenegen import (
    FormatError,
    GenerationError,
    SceneSpec,
    batch_iterator,
    encode_sample,
    generate_scene,
    read_dataset,
    shape_footprint,
    sprites_easy,
    sprites_tex,
    write_dataset,
)


def tiny_spec(**kwargs):
    defaults = dict(height=24, width=24, min_objects=1, max_objects=2,
                    size_range=(6, 8), seed=5)
    defaults.update(kwargs)
    return SceneSpec(**defaults)


def oracle_footprint(shape, cx, cy, half, height, width):
    """Independent pixel-by-pixel rasterizer."""
    mask = np.zeros((height, width), dtype=bool)
    for y in range(height):
        for x in range(width):
            if shape == "circle":
                mask[y, x] = (x - cx) ** 2 + (y - cy) ** 2 <= half * half
            elif shape == "square":
                mask[y, x] = abs(x - cx) <= half and abs(y - cy) <= half
            elif shape == "triangle":
                t = y - (cy - half)
                mask[y, x] = 0 <= t <= 2 * half and 2 * abs(x - cx) <= t
    return mask


class TestRasterization:
    @pytest.mark.parametrize("shape", ["circle", "square", "triangle"])
    def test_footprints_match_oracle(self, shape):
        for cx, cy, half in [(10, 10, 4), (6, 12, 5), (12, 7, 3)]:
            got = shape_footprint(shape, cx, cy, half, 20, 20)
            want = oracle_footprint(shape, cx, cy, half, 20, 20)
            np.testing.assert_array_equal(got, want)

    def test_single_square_mask_is_exact(self):
        spec = tiny_spec(min_objects=1, max_objects=1, shapes=("square",), size_range=(8, 8))
        sample = generate_scene(spec, 3)
        mask = sample.masks[0]
        ys, xs = np.where(mask)
        side = 2 * (8 // 2) + 1
        assert mask.sum() == side * side
        assert ys.max() - ys.min() + 1 == side and xs.max() - xs.min() + 1 == side
        # the mask must be exactly the filled bounding box
        box = np.zeros_like(mask)
        box[ys.min() : ys.max() + 1, xs.min() : xs.max() + 1] = True
        np.testing.assert_array_equal(mask, box)


class TestGenerateScene:
    def test_deterministic_bitwise(self):
        spec = sprites_tex(seed=9, size=32)
        a = generate_scene(spec, 17)
        b = generate_scene(spec, 17)
        np.testing.assert_array_equal(a.image, b.image)
        np.testing.assert_array_equal(a.masks, b.masks)
        np.testing.assert_array_equal(a.background, b.background)

    def test_distinct_indices_differ(self):
        spec = sprites_easy(seed=9, size=32)
        assert not np.array_equal(generate_scene(spec, 0).image, generate_scene(spec, 1).image)

    def test_empty_scene(self):
        spec = tiny_spec(min_objects=0, max_objects=0)
        sample = generate_scene(spec, 0)
        assert sample.count == 0
        assert sample.masks.shape == (0, 24, 24)
        assert sample.background.all()

    @given(st.integers(0, 200))
    @settings(max_examples=25, deadline=None)
    def test_mask_partition(self, index):
        sample = generate_scene(sprites_tex(seed=3, size=32), index)
        total = sample.background.astype(int)
        for m in sample.masks:
            total += m.astype(int)
        np.testing.assert_array_equal(total, np.ones((32, 32), dtype=int))

    def test_visibility_floor(self):
        spec = sprites_tex(seed=4, size=32)
        for index in range(50):
            sample = generate_scene(spec, index)
            assert all(m.sum() >= 16 for m in sample.masks)

    def test_object_count_in_range(self):
        spec = sprites_tex(seed=5, size=32)
        counts = {generate_scene(spec, i).count for i in range(40)}
        assert counts <= {3, 4, 5, 6}
        assert len(counts) > 1

    def test_images_are_quantized(self):
        sample = generate_scene(sprites_tex(seed=6, size=32), 0)
        np.testing.assert_array_equal(sample.image, np.round(sample.image * 255) / 255.0)

    def test_no_occlusion_mode_disjoint(self):
        spec = tiny_spec(height=48, width=48, min_objects=2, max_objects=2, occlusion=False)
        for index in range(10):
            sample = generate_scene(spec, index)
            assert (sample.masks.sum(axis=0) <= 1).all()

    def test_generation_error_names_spec(self):
        # 2 large non-overlapping objects cannot fit a tiny canvas
        spec = SceneSpec(height=16, width=16, min_objects=2, max_objects=2,
                         size_range=(12, 12), occlusion=False, seed=0)
        with pytest.raises(GenerationError, match="SceneSpec"):
            generate_scene(spec, 0)


class TestDatasetFile:
    def test_round_trip_lossless(self, tmp_path):
        spec = tiny_spec()
        path = tmp_path / "tiny.slpd"
        write_dataset(spec, 10, path)
        ds = read_dataset(path)
        assert len(ds) == 10
        assert ds.spec == spec
        for i in range(10):
            direct = generate_scene(spec, i)
            loaded = ds[i]
            np.testing.assert_array_equal(direct.image, loaded.image)
            np.testing.assert_array_equal(direct.masks, loaded.masks)
            np.testing.assert_array_equal(direct.background, loaded.background)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.slpd"
        path.write_bytes(b"NOPE" + b"\x00" * 64)
        with pytest.raises(FormatError, match="magic"):
            read_dataset(path)

    def test_truncation_reports_offset(self, tmp_path):
        spec = tiny_spec()
        path = tmp_path / "t.slpd"
        write_dataset(spec, 3, path)
        blob = path.read_bytes()
        cut = len(blob) - 40
        (tmp_path / "cut.slpd").write_bytes(blob[:cut])
        with pytest.raises(FormatError, match="byte offset"):
            read_dataset(tmp_path / "cut.slpd")

    def test_file_size_arithmetic(self, tmp_path):
        from slp.scenegen import _pack_header

        spec = tiny_spec()
        path = tmp_path / "sized.slpd"
        write_dataset(spec, 7, path)
        expected = len(_pack_header(spec, 7))
        for i in range(7):
            expected += len(encode_sample(generate_scene(spec, i)))
        assert os.path.getsize(path) == expected

    def test_save_is_deterministic(self, tmp_path):
        spec = tiny_spec()
        write_dataset(spec, 4, tmp_path / "a.slpd")
        write_dataset(spec, 4, tmp_path / "b.slpd")
        assert (tmp_path / "a.slpd").read_bytes() == (tmp_path / "b.slpd").read_bytes()


class TestBatchIterator:
    @pytest.fixture()
    def dataset(self, tmp_path):
        path = tmp_path / "iter.slpd"
        return write_dataset(tiny_spec(), 23, path)

    def test_single_full_batch(self, dataset):
        batches = list(batch_iterator(dataset, 23, shuffle_seed=1))
        assert len(batches) == 1
        assert len(batches[0]) == 23

    def test_same_seed_same_order(self, dataset):
        a = np.concatenate(list(batch_iterator(dataset, 5, shuffle_seed=42)))
        b = np.concatenate(list(batch_iterator(dataset, 5, shuffle_seed=42)))
        np.testing.assert_array_equal(a, b)

    def test_coverage_no_duplicates(self, dataset):
        batches = list(batch_iterator(dataset, 4, shuffle_seed=7))
        assert len(batches[-1]) == 23 % 4
        joined = np.concatenate(batches)
        assert sorted(joined.tolist()) == list(range(23))

    def test_batch_size_validated(self, dataset):
        with pytest.raises(ValueError):
            list(batch_iterator(dataset, 0, shuffle_seed=1))
