"""Feature-grid resampling and per-mask pooling into region vectors.

Two resampling strategies: interpolate the patch grid up to image size and
pool under each mask, or shrink each mask down to the grid and pool the raw
patch features. The second is cheaper but small masks can shrink to nothing;
those are skipped and reported.

All pooling accumulates in float64 with a fixed order and rounds to float32
once, so dense and lazily-gathered paths match bit for bit.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .core import (
    ConfigError,
    DimsMismatchError,
    FeatureGrid,
    MaskSet,
    RegionMask,
    RegionVector,
)
from .multi_image import sincos_embed


class Resample(enum.Enum):
    UPSAMPLE_FEATURES = "upsample_features"
    DOWNSAMPLE_MASKS = "downsample_masks"


class Reducer(enum.Enum):
    AVERAGE = "average"
    MAX = "max"


class Interpolation(enum.Enum):
    BILINEAR = "bilinear"
    NEAREST = "nearest"


@dataclass(frozen=True)
class PoolConfig:
    resample: Resample = Resample.UPSAMPLE_FEATURES
    reducer: Reducer = Reducer.AVERAGE
    add_grid_posemb: bool = False
    interpolation: Interpolation = Interpolation.BILINEAR


@dataclass(frozen=True)
class EncodeResult:
    """Region vectors in mask order plus ids of masks that shrank to nothing."""

    vectors: tuple[RegionVector, ...]
    vanished: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "vectors", tuple(self.vectors))
        object.__setattr__(self, "vanished", tuple(self.vanished))


def grid_posemb(dim: int, grid_h: int, grid_w: int) -> np.ndarray:
    """Fixed sinusoidal embedding of patch centers, shape (dim, gh, gw) f32."""
    if dim % 4 != 0:
        raise ConfigError(f"grid embedding dim must be divisible by 4, got {dim}")
    ys = (np.arange(grid_h) + 0.5) / grid_h
    xs = (np.arange(grid_w) + 0.5) / grid_w
    coords = np.stack(
        [np.repeat(ys, grid_w), np.tile(xs, grid_h)], axis=1
    )
    emb = sincos_embed(coords, dim)  # (gh*gw, dim)
    return emb.T.reshape(dim, grid_h, grid_w).copy()


def _axis_coords(n_out: int, n_in: int) -> np.ndarray:
    """Half-pixel-center source coordinates, clamped to the valid range."""
    y = (np.arange(n_out) + 0.5) * n_in / n_out - 0.5
    return np.clip(y, 0.0, n_in - 1)


def _bilinear_at(g64: np.ndarray, rows: np.ndarray, cols: np.ndarray, h: int, w: int) -> np.ndarray:
    """Bilinear samples of g64 (d, gh, gw) at image pixels; returns (d, n) f32.

    One pinned evaluation order keeps dense and per-mask gathers identical.
    """
    gh, gw = g64.shape[1], g64.shape[2]
    y = _axis_coords(h, gh)[rows]
    x = _axis_coords(w, gw)[cols]
    y0 = np.floor(y).astype(np.int64)
    x0 = np.floor(x).astype(np.int64)
    y1 = np.minimum(y0 + 1, gh - 1)
    x1 = np.minimum(x0 + 1, gw - 1)
    ty = y - y0
    tx = x - x0
    g00 = g64[:, y0, x0]
    g01 = g64[:, y0, x1]
    g10 = g64[:, y1, x0]
    g11 = g64[:, y1, x1]
    val = (1.0 - tx) * ((1.0 - ty) * g00 + ty * g10) + tx * ((1.0 - ty) * g01 + ty * g11)
    return val.astype(np.float32)


def _nearest_at(g64: np.ndarray, rows: np.ndarray, cols: np.ndarray, h: int, w: int) -> np.ndarray:
    gh, gw = g64.shape[1], g64.shape[2]
    yi = np.clip(np.floor((rows + 0.5) * gh / h).astype(np.int64), 0, gh - 1)
    xi = np.clip(np.floor((cols + 0.5) * gw / w).astype(np.int64), 0, gw - 1)
    return g64[:, yi, xi].astype(np.float32)


def _sample_at(grid64, rows, cols, h, w, interpolation: Interpolation) -> np.ndarray:
    if interpolation is Interpolation.NEAREST:
        return _nearest_at(grid64, rows, cols, h, w)
    return _bilinear_at(grid64, rows, cols, h, w)


def upsample_features(
    grid: FeatureGrid, interpolation: Interpolation = Interpolation.BILINEAR
) -> np.ndarray:
    """Resample the patch grid to full image size; returns (d, h, w) float32."""
    h, w = grid.image_dims.height, grid.image_dims.width
    g64 = grid.data.astype(np.float64)
    rows = np.repeat(np.arange(h), w)
    cols = np.tile(np.arange(w), h)
    return _sample_at(g64, rows, cols, h, w, interpolation).reshape(grid.dim, h, w)


def downsample_mask(mask: RegionMask, grid_h: int, grid_w: int) -> np.ndarray:
    """Shrink a mask to the patch grid; a cell is set iff >= 50% of its pixels
    are foreground. May come back all-False (the mask vanished)."""
    h, w = mask.dims.height, mask.dims.width
    row_cell = (np.arange(h) * grid_h) // h
    col_cell = (np.arange(w) * grid_w) // w
    flat = mask.foreground_flat
    cr = row_cell[flat // w]
    cc = col_cell[flat % w]
    fg = np.zeros((grid_h, grid_w), dtype=np.int64)
    np.add.at(fg, (cr, cc), 1)
    rows_per_cell = np.bincount(row_cell, minlength=grid_h)
    cols_per_cell = np.bincount(col_cell, minlength=grid_w)
    total = rows_per_cell[:, None] * cols_per_cell[None, :]
    return 2 * fg >= np.maximum(total, 1)


def _reduce(vals: np.ndarray, reducer: Reducer) -> np.ndarray:
    """Reduce (d, n) float32 samples to (d,); Average sums in float64."""
    if reducer is Reducer.AVERAGE:
        return (vals.astype(np.float64).sum(axis=1) / vals.shape[1]).astype(np.float32)
    return vals.max(axis=1)


def pool_region(
    dense: np.ndarray,
    mask: RegionMask,
    reducer: Reducer = Reducer.AVERAGE,
    image_id: int = 0,
    region_id: int = 0,
) -> RegionVector:
    """Pool a dense (d, h, w) grid under a mask into one region vector."""
    dense = np.asarray(dense)
    if dense.ndim != 3 or dense.shape[1:] != (mask.dims.height, mask.dims.width):
        raise DimsMismatchError(
            f"dense grid {dense.shape} does not match mask dims {mask.dims}"
        )
    flat = mask.foreground_flat
    w = mask.dims.width
    vals = dense[:, flat // w, flat % w].astype(np.float32)
    return RegionVector(image_id, region_id, _reduce(vals, reducer))


def encode_image(
    grid: FeatureGrid,
    masks: MaskSet,
    cfg: PoolConfig = PoolConfig(),
    image_id: int = 0,
) -> EncodeResult:
    """One region vector per mask (input order); vanished masks are reported.

    The dense upsampled grid is never materialized: features are sampled
    only at each mask's pixels, which is bit-identical to pooling over the
    full dense grid.
    """
    dims = masks.dims
    if grid.image_dims != dims:
        raise DimsMismatchError(f"grid image dims {grid.image_dims} != mask dims {dims}")
    feats = grid.data
    if cfg.add_grid_posemb:
        posemb = grid_posemb(grid.dim, grid.grid_h, grid.grid_w)
        feats = (feats.astype(np.float64) + posemb.astype(np.float64)).astype(np.float32)
    g64 = feats.astype(np.float64)
    h, w = dims.height, dims.width
    vectors: list[RegionVector] = []
    vanished: list[int] = []
    for mid, mask in zip(masks.ids, masks.masks):
        if cfg.resample is Resample.UPSAMPLE_FEATURES:
            flat = mask.foreground_flat
            vals = _sample_at(g64, flat // w, flat % w, h, w, cfg.interpolation)
        else:
            small = downsample_mask(mask, grid.grid_h, grid.grid_w)
            if not small.any():
                vanished.append(mid)
                continue
            cr, cc = np.nonzero(small)
            vals = feats[:, cr, cc]
        vectors.append(RegionVector(image_id, mid, _reduce(vals, cfg.reducer)))
    return EncodeResult(tuple(vectors), tuple(vanished))
