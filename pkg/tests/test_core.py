import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from regionrep.core import (
    ConfigError,
    DimsMismatchError,
    EmptyMaskError,
    FeatureGrid,
    IGNORE_LABEL,
    ImageDims,
    LabelMap,
    MaskSet,
    MaskSource,
    RegionMask,
    RegionVector,
    mask_union_complement,
    overlap_count,
    rle_encode,
)


class TestImageDims:
    def test_pixels(self):
        assert ImageDims(3, 5).pixels == 15

    @pytest.mark.parametrize("h,w", [(0, 5), (5, 0), (-1, 5)])
    def test_rejects_non_positive(self, h, w):
        with pytest.raises(ConfigError):
            ImageDims(h, w)

    def test_frozen(self):
        d = ImageDims(2, 2)
        with pytest.raises(AttributeError):
            d.height = 3


class TestRegionMask:
    def test_runs_roundtrip_bitmap(self):
        bitmap = np.array([[0, 1, 1], [1, 0, 0]], dtype=bool)
        mask = rle_encode(bitmap)
        assert mask.runs == (1, 3, 2)
        assert np.array_equal(mask.to_bitmap(), bitmap)

    def test_leading_zero_run_means_first_pixel_foreground(self):
        mask = RegionMask(ImageDims(1, 4), [0, 2, 2])
        assert np.array_equal(mask.to_bitmap(), [[True, True, False, False]])

    def test_pixel_count_and_bbox_and_centroid(self):
        bitmap = np.zeros((4, 6), dtype=bool)
        bitmap[1:3, 2:5] = True
        mask = rle_encode(bitmap)
        assert mask.pixel_count == 6
        assert mask.bbox == (1, 2, 2, 4)
        assert mask.centroid == (1.5, 3.0)

    def test_all_background_rejected(self):
        with pytest.raises(EmptyMaskError):
            rle_encode(np.zeros((2, 2), dtype=bool))
        with pytest.raises(EmptyMaskError):
            RegionMask(ImageDims(2, 2), [4])

    @pytest.mark.parametrize(
        "runs",
        [[], [1, 0, 3], [2, -1, 3], [1, 1], [1, 1, 3]],
    )
    def test_bad_runs_rejected(self, runs):
        with pytest.raises((ValueError, EmptyMaskError)):
            RegionMask(ImageDims(2, 2), runs)

    def test_foreground_flat_sorted_row_major(self):
        bitmap = np.array([[1, 0], [0, 1]], dtype=bool)
        mask = rle_encode(bitmap)
        assert mask.foreground_flat.tolist() == [0, 3]

    def test_immutable(self):
        mask = RegionMask(ImageDims(1, 2), [1, 1])
        with pytest.raises(AttributeError):
            mask.runs = (2,)
        with pytest.raises(ValueError):
            mask.foreground_flat[0] = 5

    def test_equality_includes_source(self):
        a = RegionMask(ImageDims(1, 2), [1, 1], source=MaskSource.SAM)
        b = RegionMask(ImageDims(1, 2), [1, 1], source=MaskSource.SLIC)
        c = RegionMask(ImageDims(1, 2), [1, 1], source=MaskSource.SAM)
        assert a != b
        assert a == c
        assert hash(a) == hash(c)

    @settings(max_examples=200, deadline=None)
    @given(
        h=st.integers(1, 12),
        w=st.integers(1, 12),
        seed=st.integers(0, 2**32 - 1),
    )
    def test_encode_roundtrips_any_nonempty_bitmap(self, h, w, seed):
        rng = np.random.default_rng(seed)
        bitmap = rng.random((h, w)) < 0.4
        if not bitmap.any():
            bitmap[0, 0] = True
        mask = rle_encode(bitmap)
        assert np.array_equal(mask.to_bitmap(), bitmap)
        assert mask.pixel_count == int(bitmap.sum())
        # runs alternate background first and sum to the pixel count
        assert sum(mask.runs) == h * w
        assert all(r > 0 for r in mask.runs[1:])


class TestMaskSet:
    def test_default_ids_are_positional(self):
        dims = ImageDims(2, 2)
        ms = MaskSet(dims, [RegionMask(dims, [0, 1, 3]), RegionMask(dims, [1, 1, 2])])
        assert ms.ids == (0, 1)

    def test_duplicate_ids_rejected(self):
        dims = ImageDims(2, 2)
        m = RegionMask(dims, [0, 1, 3])
        with pytest.raises(ValueError):
            MaskSet(dims, [m, m], ids=[7, 7])

    def test_dims_mismatch_rejected(self):
        with pytest.raises(DimsMismatchError):
            MaskSet(ImageDims(2, 2), [RegionMask(ImageDims(2, 3), [0, 1, 5])])

    def test_coverage_counts_overlap(self):
        dims = ImageDims(1, 3)
        ms = MaskSet(dims, [RegionMask(dims, [0, 2, 1]), RegionMask(dims, [1, 2])])
        assert ms.coverage_counts().tolist() == [[1, 2, 1]]

    def test_is_partition(self):
        dims = ImageDims(1, 4)
        halves = MaskSet(dims, [RegionMask(dims, [0, 2, 2]), RegionMask(dims, [2, 2])])
        assert halves.is_partition()
        gap = MaskSet(dims, [RegionMask(dims, [0, 2, 2])])
        assert not gap.is_partition()
        overlap = MaskSet(dims, [RegionMask(dims, [0, 3, 1]), RegionMask(dims, [2, 2])])
        assert not overlap.is_partition()


def test_mask_union_complement():
    dims = ImageDims(1, 4)
    ms = MaskSet(dims, [RegionMask(dims, [0, 2, 2])])
    rest = mask_union_complement(ms)
    assert rest.runs == (2, 2)
    full = MaskSet(dims, [RegionMask(dims, [0, 4])])
    assert mask_union_complement(full) is None


def test_overlap_count():
    dims = ImageDims(1, 4)
    a = RegionMask(dims, [0, 3, 1])
    b = RegionMask(dims, [2, 2])
    assert overlap_count(a, b) == 1
    assert overlap_count(b, a) == 1
    with pytest.raises(DimsMismatchError):
        overlap_count(a, RegionMask(ImageDims(1, 5), [0, 5]))


class TestFeatureGrid:
    def test_geometry(self):
        g = FeatureGrid(np.zeros((3, 2, 4)), patch=8, image_dims=ImageDims(16, 32))
        assert (g.dim, g.grid_h, g.grid_w, g.patch) == (3, 2, 4, 8)

    def test_rejects_non_finite(self):
        data = np.zeros((1, 1, 1))
        data[0, 0, 0] = np.nan
        with pytest.raises(ValueError):
            FeatureGrid(data, patch=1, image_dims=ImageDims(1, 1))

    def test_data_stored_float32_readonly(self):
        g = FeatureGrid(np.ones((1, 1, 1), dtype=np.float64), 1, ImageDims(1, 1))
        assert g.data.dtype == np.float32
        with pytest.raises(ValueError):
            g.data[0, 0, 0] = 2.0


class TestLabelMap:
    def test_ignore_value_allowed_anywhere(self):
        labels = np.array([[0, IGNORE_LABEL], [1, 2]], dtype=np.uint16)
        lm = LabelMap(labels, num_classes=3)
        assert lm.ignore_value == IGNORE_LABEL
        assert lm.dims == ImageDims(2, 2)

    def test_label_out_of_range_rejected(self):
        with pytest.raises(ValueError):
            LabelMap(np.array([[3]], dtype=np.uint16), num_classes=3)

    def test_num_classes_bounds(self):
        with pytest.raises(ConfigError):
            LabelMap(np.zeros((1, 1), dtype=np.uint16), num_classes=0)
        with pytest.raises(ConfigError):
            LabelMap(np.zeros((1, 1), dtype=np.uint16), num_classes=IGNORE_LABEL)


class TestRegionVector:
    def test_dim_and_ids(self):
        v = RegionVector(3, 9, np.arange(4, dtype=np.float32))
        assert (v.image_id, v.region_id, v.dim) == (3, 9, 4)

    def test_rejects_non_finite_and_non_1d(self):
        with pytest.raises(ValueError):
            RegionVector(0, 0, np.array([np.inf], dtype=np.float32))
        with pytest.raises(ValueError):
            RegionVector(0, 0, np.zeros((2, 2), dtype=np.float32))
