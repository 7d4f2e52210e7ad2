"""Region-level training labels derived from per-pixel ground truth.

A region takes the majority class of its non-ignore pixels when that class
covers at least a threshold fraction of them; otherwise it is excluded from
training. Oracle distributions keep the full per-class pixel fractions.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import ConfigError, DimsMismatchError, LabelMap, RegionMask


@dataclass(frozen=True)
class RegionLabel:
    region_id: int
    label: int
    weight: int  # region pixel count, including ignore pixels


def _class_counts(mask: RegionMask, gt: LabelMap) -> tuple[np.ndarray, int]:
    """Per-class pixel counts under the mask over non-ignore pixels."""
    if mask.dims != gt.dims:
        raise DimsMismatchError(f"mask dims {mask.dims} != label map dims {gt.dims}")
    vals = gt.labels.ravel()[mask.foreground_flat]
    vals = vals[vals != gt.ignore_value]
    counts = np.bincount(vals, minlength=gt.num_classes)
    return counts, int(vals.size)


def derive_region_label(
    mask: RegionMask,
    gt: LabelMap,
    threshold: float = 0.5,
    region_id: int = 0,
) -> RegionLabel | None:
    """Majority label of the mask's non-ignore pixels, or None when excluded.

    The majority class must cover at least `threshold` of the non-ignore
    pixels; ties go to the lowest class index. A mask whose pixels are all
    ignore is excluded. The weight is the full region pixel count.
    """
    if not 0.0 < threshold <= 1.0:
        raise ConfigError(f"threshold must be in (0, 1], got {threshold}")
    counts, n = _class_counts(mask, gt)
    if n == 0:
        return None
    c = int(np.argmax(counts))
    if counts[c] / n < threshold:
        return None
    return RegionLabel(region_id, c, mask.pixel_count)


def oracle_region_probs(mask: RegionMask, gt: LabelMap) -> np.ndarray | None:
    """Per-class pixel fractions under the mask (non-ignore denominator).

    Returns None when every mask pixel is ignore (no defined distribution).
    """
    counts, n = _class_counts(mask, gt)
    if n == 0:
        return None
    return counts / n
