"""Domain types and mask algebra for region-based image representations.

All types are immutable after construction and safe to share across
threads; the operations in this module are pure functions.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Sequence

import numpy as np

IGNORE_LABEL = 0xFFFF  # maximum representable u16 label; never a real class


class RegionRepError(Exception):
    """Base class for all library errors."""


class EmptyMaskError(RegionRepError):
    """A mask operation produced or received zero foreground pixels."""


class DimsMismatchError(RegionRepError):
    """Operands disagree on image or vector dimensions."""


class ConfigError(RegionRepError):
    """Invalid configuration or parameter values."""


class NonPartitionError(RegionRepError):
    """A mask set expected to partition the image does not."""


class FormatError(RegionRepError):
    """A file or buffer violates its documented format."""


class TruncatedFileError(FormatError):
    """A file ended before its payload was complete."""


class DivergenceError(RegionRepError):
    """Training produced a non-finite loss."""


class MaskSource(enum.Enum):
    SAM = "sam"
    SLIC = "slic"
    SYNTHETIC = "synthetic"
    OTHER = "other"


@dataclass(frozen=True)
class ImageDims:
    height: int
    width: int

    def __post_init__(self):
        if self.height < 1 or self.width < 1:
            raise ConfigError(f"image dims must be >= 1, got {self.height}x{self.width}")

    @property
    def pixels(self) -> int:
        return self.height * self.width


def _validate_runs(runs: tuple[int, ...], dims: ImageDims) -> None:
    if not runs:
        raise ValueError("empty run list")
    if runs[0] < 0 or any(r <= 0 for r in runs[1:]):
        raise ValueError("runs must be positive (first background run may be zero)")
    total = sum(runs)
    if total != dims.pixels:
        raise ValueError(f"runs sum to {total}, expected {dims.pixels} for {dims.height}x{dims.width}")


def _foreground_flat(runs: Sequence[int]) -> np.ndarray:
    """Flat row-major indices of foreground pixels implied by the runs."""
    bounds = np.cumsum(np.asarray(runs, dtype=np.int64))
    starts = bounds[0::2]
    ends = bounds[1::2]
    starts = starts[: len(ends)]
    lengths = ends - starts
    if lengths.sum() == 0:
        return np.empty(0, dtype=np.int64)
    offsets = np.arange(lengths.sum(), dtype=np.int64) - np.repeat(np.cumsum(lengths) - lengths, lengths)
    return np.repeat(starts, lengths) + offsets


class RegionMask:
    """A run-length-coded binary pixel mask.

    Runs are row-major over the flattened image and alternate starting with
    the background count (which may be zero); every later run is positive.
    Foreground runs are the odd-indexed entries. Masks always contain at
    least one foreground pixel; operations that can produce emptiness
    return None instead of an empty mask.
    """

    __slots__ = ("dims", "runs", "source", "pixel_count", "bbox", "_flat", "_centroid")

    def __init__(self, dims: ImageDims, runs: Sequence[int], source: MaskSource = MaskSource.OTHER):
        runs = tuple(int(r) for r in runs)
        _validate_runs(runs, dims)
        pixel_count = sum(runs[1::2])
        if pixel_count < 1:
            raise EmptyMaskError("mask has no foreground pixels")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "runs", runs)
        object.__setattr__(self, "source", source)
        object.__setattr__(self, "pixel_count", pixel_count)
        flat = _foreground_flat(runs)
        flat.setflags(write=False)
        object.__setattr__(self, "_flat", flat)
        rows = flat // dims.width
        cols = flat % dims.width
        bbox = (int(rows.min()), int(cols.min()), int(rows.max()), int(cols.max()))
        object.__setattr__(self, "bbox", bbox)
        object.__setattr__(self, "_centroid", (float(rows.mean()), float(cols.mean())))

    def __setattr__(self, name, value):
        raise AttributeError("RegionMask is immutable")

    @classmethod
    def from_bitmap(cls, bitmap: np.ndarray, source: MaskSource = MaskSource.OTHER) -> "RegionMask":
        return rle_encode(bitmap, source=source)

    @property
    def centroid(self) -> tuple[float, float]:
        """Arithmetic mean (row, col) of the foreground pixels."""
        return self._centroid

    @property
    def foreground_flat(self) -> np.ndarray:
        """Flat row-major indices of foreground pixels (read-only view)."""
        return self._flat

    def to_bitmap(self) -> np.ndarray:
        out = np.zeros(self.dims.pixels, dtype=bool)
        out[self._flat] = True
        return out.reshape(self.dims.height, self.dims.width)

    def __eq__(self, other):
        return (
            isinstance(other, RegionMask)
            and self.dims == other.dims
            and self.runs == other.runs
            and self.source == other.source
        )

    def __hash__(self):
        return hash((self.dims, self.runs, self.source))

    def __repr__(self):
        return f"RegionMask({self.dims.height}x{self.dims.width}, px={self.pixel_count}, source={self.source.value})"


def rle_encode(bitmap: np.ndarray, source: MaskSource = MaskSource.OTHER) -> RegionMask:
    """Encode a row-major boolean grid as a RegionMask.

    Raises EmptyMaskError for an all-background grid.
    """
    bitmap = np.asarray(bitmap)
    if bitmap.ndim != 2 or bitmap.size == 0:
        raise ValueError(f"expected a non-empty 2-d grid, got shape {bitmap.shape}")
    flat = bitmap.astype(bool).ravel()
    if not flat.any():
        raise EmptyMaskError("all-background grid cannot be encoded")
    changes = np.flatnonzero(np.diff(flat)) + 1
    bounds = np.concatenate(([0], changes, [flat.size]))
    runs = np.diff(bounds).tolist()
    if flat[0]:
        runs = [0] + runs
    dims = ImageDims(bitmap.shape[0], bitmap.shape[1])
    return RegionMask(dims, runs, source=source)


class MaskSet:
    """An ordered collection of masks over one image, with parallel ids.

    Masks may overlap and need not cover the image.
    """

    __slots__ = ("dims", "masks", "ids")

    def __init__(self, dims: ImageDims, masks: Sequence[RegionMask] = (), ids: Sequence[int] | None = None):
        masks = tuple(masks)
        for m in masks:
            if m.dims != dims:
                raise DimsMismatchError(f"mask dims {m.dims} do not match set dims {dims}")
        if ids is None:
            ids = tuple(range(len(masks)))
        else:
            ids = tuple(int(i) for i in ids)
            if len(ids) != len(masks):
                raise ValueError(f"{len(ids)} ids for {len(masks)} masks")
            if len(set(ids)) != len(ids):
                raise ValueError("mask ids must be unique")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "masks", masks)
        object.__setattr__(self, "ids", ids)

    def __setattr__(self, name, value):
        raise AttributeError("MaskSet is immutable")

    def __len__(self):
        return len(self.masks)

    def __iter__(self):
        return iter(self.masks)

    def coverage_counts(self) -> np.ndarray:
        """Per-pixel count of containing masks, shape (h, w)."""
        counts = np.zeros(self.dims.pixels, dtype=np.int32)
        for m in self.masks:
            counts[m.foreground_flat] += 1
        return counts.reshape(self.dims.height, self.dims.width)

    def is_partition(self) -> bool:
        if sum(m.pixel_count for m in self.masks) != self.dims.pixels:
            return False
        return bool((self.coverage_counts() == 1).all())


def mask_union_complement(mask_set: MaskSet) -> RegionMask | None:
    """Pixels covered by no mask in the set; None when every pixel is covered."""
    covered = np.zeros(mask_set.dims.pixels, dtype=bool)
    for m in mask_set:
        covered[m.foreground_flat] = True
    if covered.all():
        return None
    return rle_encode(~covered.reshape(mask_set.dims.height, mask_set.dims.width))


def overlap_count(a: RegionMask, b: RegionMask) -> int:
    """Number of pixels foreground in both masks (symmetric)."""
    if a.dims != b.dims:
        raise DimsMismatchError(f"mask dims differ: {a.dims} vs {b.dims}")
    return int(np.intersect1d(a.foreground_flat, b.foreground_flat, assume_unique=True).size)


def centroid(mask: RegionMask) -> tuple[float, float]:
    return mask.centroid


class FeatureGrid:
    """A d x grid_h x grid_w patch-feature tensor with image geometry."""

    __slots__ = ("dim", "grid_h", "grid_w", "patch", "image_dims", "data")

    def __init__(self, data: np.ndarray, patch: int, image_dims: ImageDims):
        data = np.ascontiguousarray(data, dtype=np.float32)
        if data.ndim != 3:
            raise ValueError(f"expected (d, grid_h, grid_w) data, got shape {data.shape}")
        if not np.isfinite(data).all():
            raise ValueError("feature grid contains NaN or Inf")
        if patch < 1:
            raise ConfigError(f"patch size must be >= 1, got {patch}")
        if not isinstance(image_dims, ImageDims):
            image_dims = ImageDims(*image_dims)
        data.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "dim", data.shape[0])
        object.__setattr__(self, "grid_h", data.shape[1])
        object.__setattr__(self, "grid_w", data.shape[2])
        object.__setattr__(self, "patch", patch)
        object.__setattr__(self, "image_dims", image_dims)

    def __setattr__(self, name, value):
        raise AttributeError("FeatureGrid is immutable")


class LabelMap:
    """Per-pixel class indices with a reserved ignore value."""

    __slots__ = ("dims", "labels", "num_classes", "ignore_value")

    def __init__(self, labels: np.ndarray, num_classes: int):
        labels = np.ascontiguousarray(labels, dtype=np.uint16)
        if labels.ndim != 2:
            raise ValueError(f"expected (h, w) labels, got shape {labels.shape}")
        if not 1 <= num_classes < IGNORE_LABEL:
            raise ConfigError(f"num_classes must be in [1, {IGNORE_LABEL}), got {num_classes}")
        real = labels[labels != IGNORE_LABEL]
        if real.size and int(real.max()) >= num_classes:
            raise ValueError(f"label {int(real.max())} out of range for {num_classes} classes")
        labels.setflags(write=False)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "dims", ImageDims(labels.shape[0], labels.shape[1]))
        object.__setattr__(self, "num_classes", int(num_classes))
        object.__setattr__(self, "ignore_value", IGNORE_LABEL)

    def __setattr__(self, name, value):
        raise AttributeError("LabelMap is immutable")


class RegionVector:
    """A pooled d-dimensional embedding tagged with image and region ids."""

    __slots__ = ("image_id", "region_id", "values")

    def __init__(self, image_id: int, region_id: int, values: np.ndarray):
        values = np.ascontiguousarray(values, dtype=np.float32)
        if values.ndim != 1:
            raise ValueError(f"expected a 1-d vector, got shape {values.shape}")
        if not np.isfinite(values).all():
            raise ValueError("region vector contains NaN or Inf")
        values.setflags(write=False)
        object.__setattr__(self, "image_id", int(image_id))
        object.__setattr__(self, "region_id", int(region_id))
        object.__setattr__(self, "values", values)

    def __setattr__(self, name, value):
        raise AttributeError("RegionVector is immutable")

    @property
    def dim(self) -> int:
        return self.values.shape[0]

    def __repr__(self):
        return f"RegionVector(image={self.image_id}, region={self.region_id}, d={self.dim})"
