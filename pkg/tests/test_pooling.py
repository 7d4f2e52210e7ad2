import numpy as np
import pytest

from regionrep.core import (
    DimsMismatchError,
    FeatureGrid,
    ImageDims,
    MaskSet,
    RegionMask,
    rle_encode,
)
from regionrep.pooling import (
    EncodeResult,
    Interpolation,
    PoolConfig,
    Reducer,
    Resample,
    downsample_mask,
    encode_image,
    grid_posemb,
    pool_region,
    upsample_features,
)

from conftest import random_masks


def brute_force_bilinear(grid: FeatureGrid) -> np.ndarray:
    """Per-pixel bilinear resample with half-pixel centers, plain loops."""
    d, gh, gw = grid.data.shape
    h, w = grid.image_dims.height, grid.image_dims.width
    g = grid.data.astype(np.float64)
    out = np.zeros((d, h, w))
    for y in range(h):
        for x in range(w):
            sy = (y + 0.5) * gh / h - 0.5
            sx = (x + 0.5) * gw / w - 0.5
            sy = min(max(sy, 0.0), gh - 1.0)
            sx = min(max(sx, 0.0), gw - 1.0)
            y0, x0 = int(np.floor(sy)), int(np.floor(sx))
            y1, x1 = min(y0 + 1, gh - 1), min(x0 + 1, gw - 1)
            ty, tx = sy - y0, sx - x0
            for c in range(d):
                left = (1 - ty) * g[c, y0, x0] + ty * g[c, y1, x0]
                right = (1 - ty) * g[c, y0, x1] + ty * g[c, y1, x1]
                out[c, y, x] = (1 - tx) * left + tx * right
    return out


def random_grid(rng, d, gh, gw, patch):
    data = rng.standard_normal((d, gh, gw)).astype(np.float32)
    return FeatureGrid(data, patch=patch, image_dims=ImageDims(gh * patch, gw * patch))


class TestUpsample:
    def test_matches_brute_force_bilinear(self, rng):
        for _ in range(5):
            grid = random_grid(rng, 3, 4, 5, 3)
            dense = upsample_features(grid)
            ref = brute_force_bilinear(grid)
            np.testing.assert_allclose(dense, ref.astype(np.float32), atol=1e-6)

    def test_constant_grid_stays_constant(self):
        grid = FeatureGrid(np.full((2, 3, 3), 7.5, dtype=np.float32), 4, ImageDims(12, 12))
        dense = upsample_features(grid)
        assert (dense == 7.5).all()

    def test_nearest_picks_patch_value(self):
        data = np.arange(4, dtype=np.float32).reshape(1, 2, 2)
        grid = FeatureGrid(data, patch=2, image_dims=ImageDims(4, 4))
        dense = upsample_features(grid, Interpolation.NEAREST)
        assert dense[0, 0, 0] == 0 and dense[0, 0, 3] == 1
        assert dense[0, 3, 0] == 2 and dense[0, 3, 3] == 3

    def test_1x1_grid(self):
        grid = FeatureGrid(np.full((1, 1, 1), 3.0, dtype=np.float32), 5, ImageDims(5, 5))
        assert (upsample_features(grid) == 3.0).all()


class TestDownsampleMask:
    def test_cell_set_iff_half_or_more_foreground(self):
        # patch cells of 2x2 px: 2 of 4 foreground keeps the cell
        bitmap = np.zeros((4, 4), dtype=bool)
        bitmap[0, 0] = bitmap[0, 1] = True  # cell (0,0): 2/4 -> kept
        bitmap[2, 0] = True  # cell (1,0): 1/4 -> dropped
        mask = rle_encode(bitmap)
        small = downsample_mask(mask, 2, 2)
        assert small.tolist() == [[True, False], [False, False]]

    def test_mask_can_vanish(self):
        bitmap = np.zeros((4, 4), dtype=bool)
        bitmap[1, 1] = True
        assert not downsample_mask(rle_encode(bitmap), 2, 2).any()

    def test_full_mask_fills_grid(self):
        mask = RegionMask(ImageDims(6, 6), [0, 36])
        assert downsample_mask(mask, 3, 3).all()

    def test_uneven_cells(self):
        # 5 px across 2 cells: cells own 2 and 3 pixels
        bitmap = np.zeros((1, 5), dtype=bool)
        bitmap[0, 2:] = True  # cell 1 fully covered, cell 0 empty
        small = downsample_mask(rle_encode(bitmap), 1, 2)
        assert small.tolist() == [[False, True]]


class TestPoolRegion:
    def test_average_over_mask(self):
        dense = np.arange(8, dtype=np.float32).reshape(2, 2, 2)
        mask = RegionMask(ImageDims(2, 2), [0, 2, 2])  # first row
        v = pool_region(dense, mask, Reducer.AVERAGE)
        np.testing.assert_allclose(v.values, [0.5, 4.5])

    def test_max_over_mask(self):
        dense = np.arange(8, dtype=np.float32).reshape(2, 2, 2)
        mask = RegionMask(ImageDims(2, 2), [1, 3])
        v = pool_region(dense, mask, Reducer.MAX)
        np.testing.assert_allclose(v.values, [3.0, 7.0])

    def test_shape_mismatch(self):
        with pytest.raises(DimsMismatchError):
            pool_region(np.zeros((1, 2, 2)), RegionMask(ImageDims(2, 3), [0, 6]))


def naive_encode(grid: FeatureGrid, masks: MaskSet, cfg: PoolConfig):
    """Materialize the dense grid, loop per mask per pixel. The oracle."""
    feats = grid.data.astype(np.float64)
    if cfg.add_grid_posemb:
        feats = feats + grid_posemb(grid.dim, grid.grid_h, grid.grid_w)
    f32grid = FeatureGrid(feats.astype(np.float32), grid.patch, grid.image_dims)
    if cfg.resample is Resample.UPSAMPLE_FEATURES:
        dense = brute_force_bilinear(f32grid).astype(np.float32)
        vectors = [
            pool_region(dense, m, cfg.reducer, region_id=mid)
            for mid, m in zip(masks.ids, masks.masks)
        ]
        return EncodeResult(tuple(vectors), ())
    vectors, vanished = [], []
    for mid, m in zip(masks.ids, masks.masks):
        small = downsample_mask(m, grid.grid_h, grid.grid_w)
        if not small.any():
            vanished.append(mid)
            continue
        vals = f32grid.data[:, small]
        if cfg.reducer is Reducer.AVERAGE:
            pooled = (vals.astype(np.float64).mean(axis=1)).astype(np.float32)
        else:
            pooled = vals.max(axis=1)
        vectors.append(pooled)
    return vectors, vanished


class TestEncodeImage:
    def test_matches_naive_upsample_average(self, rng):
        for _ in range(10):
            gh, gw = int(rng.integers(2, 6)), int(rng.integers(2, 6))
            patch = int(rng.integers(2, 5))
            grid = random_grid(rng, int(rng.integers(1, 8)), gh, gw, patch)
            masks = random_masks(rng, grid.image_dims, int(rng.integers(1, 6)))
            got = encode_image(grid, masks, PoolConfig())
            ref = naive_encode(grid, masks, PoolConfig())
            for a, b in zip(got.vectors, ref.vectors):
                np.testing.assert_allclose(a.values, b.values, atol=1e-6)

    def test_matches_naive_all_configs(self, rng):
        grid = random_grid(rng, 4, 3, 4, 2)
        masks = random_masks(rng, grid.image_dims, 4)
        for resample in Resample:
            for reducer in Reducer:
                cfg = PoolConfig(resample=resample, reducer=reducer)
                got = encode_image(grid, masks, cfg)
                if resample is Resample.UPSAMPLE_FEATURES:
                    ref = naive_encode(grid, masks, cfg)
                    for a, b in zip(got.vectors, ref.vectors):
                        np.testing.assert_allclose(a.values, b.values, atol=1e-6)
                else:
                    ref_vecs, ref_vanished = naive_encode(grid, masks, cfg)
                    assert list(got.vanished) == ref_vanished
                    for a, b in zip(got.vectors, ref_vecs):
                        np.testing.assert_allclose(a.values, b, atol=1e-6)

    def test_vector_order_and_ids_follow_masks(self, rng):
        grid = random_grid(rng, 2, 2, 2, 2)
        dims = grid.image_dims
        masks = MaskSet(
            dims,
            [RegionMask(dims, [0, 8, 8]), RegionMask(dims, [8, 8])],
            ids=[5, 3],
        )
        out = encode_image(grid, masks, PoolConfig(), image_id=11)
        assert [v.region_id for v in out.vectors] == [5, 3]
        assert all(v.image_id == 11 for v in out.vectors)

    def test_single_pixel_mask_vanishes_only_when_downsampling(self):
        grid = FeatureGrid(np.ones((1, 2, 2), dtype=np.float32), 2, ImageDims(4, 4))
        bitmap = np.zeros((4, 4), dtype=bool)
        bitmap[0, 0] = True
        masks = MaskSet(ImageDims(4, 4), [rle_encode(bitmap)], ids=[42])
        up = encode_image(grid, masks, PoolConfig())
        assert len(up.vectors) == 1 and up.vanished == ()
        down = encode_image(grid, masks, PoolConfig(resample=Resample.DOWNSAMPLE_MASKS))
        assert down.vectors == () and down.vanished == (42,)

    def test_grid_posemb_changes_values_deterministically(self, rng):
        grid = random_grid(rng, 8, 3, 3, 2)
        masks = random_masks(rng, grid.image_dims, 3)
        plain = encode_image(grid, masks, PoolConfig())
        with_pe = encode_image(grid, masks, PoolConfig(add_grid_posemb=True))
        again = encode_image(grid, masks, PoolConfig(add_grid_posemb=True))
        assert any(
            not np.array_equal(a.values, b.values)
            for a, b in zip(plain.vectors, with_pe.vectors)
        )
        for a, b in zip(with_pe.vectors, again.vectors):
            assert np.array_equal(a.values, b.values)

    def test_dims_mismatch(self, rng):
        grid = random_grid(rng, 2, 2, 2, 2)
        masks = MaskSet(ImageDims(5, 5), [RegionMask(ImageDims(5, 5), [0, 25])])
        with pytest.raises(DimsMismatchError):
            encode_image(grid, masks, PoolConfig())


class TestGridPosemb:
    def test_shape_and_determinism(self):
        pe = grid_posemb(8, 3, 5)
        assert pe.shape == (8, 3, 5)
        assert np.array_equal(pe, grid_posemb(8, 3, 5))

    def test_distinct_cells_distinct_codes(self):
        pe = grid_posemb(16, 4, 4).reshape(16, -1)
        assert np.unique(pe, axis=1).shape[1] == 16

    def test_values_bounded(self):
        pe = grid_posemb(12, 6, 6)
        assert (np.abs(pe) <= 1.0 + 1e-12).all()
