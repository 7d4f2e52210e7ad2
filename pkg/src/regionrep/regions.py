"""Coverage augmentation: fill the pixels no base mask covers with superpixel pieces.

A base mask set (typically promptable-segmentation output) can leave parts
of the image uncovered. Each superpixel is intersected with the uncovered
set and the piece is appended as a new region when it is large enough.
Base masks are never modified; added pieces are disjoint from all of them.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import (
    DimsMismatchError,
    MaskSet,
    MaskSource,
    NonPartitionError,
    rle_encode,
)


@dataclass(frozen=True)
class CoverageStats:
    covered_fraction: float
    region_count: int
    mean_region_px: float


def coverage_stats(masks: MaskSet) -> CoverageStats:
    """Fraction of pixels covered by at least one mask, plus region counts."""
    n = len(masks)
    if n == 0:
        return CoverageStats(0.0, 0, 0.0)
    covered = int(np.count_nonzero(masks.coverage_counts()))
    total_px = sum(m.pixel_count for m in masks)
    return CoverageStats(covered / masks.dims.pixels, n, total_px / n)


def augment_with_slic(sam: MaskSet, slic: MaskSet, min_uncovered: int = 300) -> MaskSet:
    """Append superpixel pieces covering what the base set leaves uncovered.

    A piece is kept when its intersection with the uncovered set has at
    least min_uncovered pixels; it is clipped to that intersection, so
    added masks never overlap base masks. Idempotent for a fixed slic
    partition.
    """
    if sam.dims != slic.dims:
        raise DimsMismatchError(f"base dims {sam.dims} != superpixel dims {slic.dims}")
    if not slic.is_partition():
        raise NonPartitionError("superpixel set must partition the image")
    uncovered = sam.coverage_counts().ravel() == 0
    out_masks = list(sam.masks)
    out_ids = list(sam.ids)
    next_id = max(out_ids) + 1 if out_ids else 0
    h, w = sam.dims.height, sam.dims.width
    for s in slic:
        piece = np.zeros(h * w, dtype=bool)
        piece[s.foreground_flat] = True
        piece &= uncovered
        if int(piece.sum()) < min_uncovered:
            continue
        out_masks.append(rle_encode(piece.reshape(h, w), source=MaskSource.SLIC))
        out_ids.append(next_id)
        next_id += 1
    return MaskSet(sam.dims, out_masks, out_ids)
