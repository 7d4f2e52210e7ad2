"""Per-pixel predictions from region class distributions, and IoU scoring.

A pixel's class distribution is the unweighted mean of the distributions
of the regions containing it; pixels covered by no region are void. Void
is not a class: it is never averaged over and always scores as a wrong
prediction. mIoU averages over classes present in ground truth or
prediction; ground-truth ignore pixels are skipped entirely.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import (
    IGNORE_LABEL,
    ConfigError,
    DimsMismatchError,
    ImageDims,
    LabelMap,
    MaskSet,
)
from .labeling import oracle_region_probs


@dataclass(frozen=True)
class PixelPrediction:
    """Argmax labels plus a void flag; probabilities kept when available."""

    dims: ImageDims
    labels: np.ndarray  # (h, w) int64, meaningless where void
    void: np.ndarray  # (h, w) bool, True when no region contains the pixel
    probs: np.ndarray | None = None  # (h, w, C) float64 mean distributions

    def __post_init__(self):
        h, w = self.dims.height, self.dims.width
        if self.labels.shape != (h, w) or self.void.shape != (h, w):
            raise DimsMismatchError("labels and void must both be (h, w)")
        if self.probs is not None and self.probs.shape[:2] != (h, w):
            raise DimsMismatchError("probs must be (h, w, C)")
        self.labels.setflags(write=False)
        self.void.setflags(write=False)
        if self.probs is not None:
            self.probs.setflags(write=False)


@dataclass(frozen=True)
class IouReport:
    """Per-class IoU over classes present in GT or prediction.

    miou is None when ground truth contains no scored pixel. confusion has
    one row per class and a trailing void column.
    """

    class_ids: tuple[int, ...]
    ious: tuple[float, ...]
    miou: float | None
    confusion: np.ndarray  # (C, C+1) int64, rows GT, last column void

    def __post_init__(self):
        if len(self.class_ids) != len(self.ious):
            raise ConfigError("class_ids and ious must align")
        self.confusion.setflags(write=False)


def predict_pixels(
    masks: MaskSet,
    region_probs: Sequence[np.ndarray | None],
    num_classes: int | None = None,
) -> PixelPrediction:
    """Vote each region's class distribution into the pixels it covers.

    region_probs aligns with masks; None entries (regions with no scored
    pixels) cast no vote, and pixels covered only by such regions are void.
    Argmax ties resolve to the lowest class index.
    """
    if len(region_probs) != len(masks.masks):
        raise DimsMismatchError(
            f"{len(region_probs)} distributions for {len(masks.masks)} masks"
        )
    h, w = masks.dims.height, masks.dims.width
    cls = num_classes
    for p in region_probs:
        if p is None:
            continue
        p = np.asarray(p)
        if p.ndim != 1:
            raise DimsMismatchError("region distribution must be 1-d")
        if cls is None:
            cls = p.shape[0]
        elif p.shape[0] != cls:
            raise DimsMismatchError(
                f"distribution length {p.shape[0]} != {cls}"
            )
    if cls is None:
        # no voting region at all: everything void
        return PixelPrediction(
            dims=masks.dims,
            labels=np.zeros((h, w), dtype=np.int64),
            void=np.ones((h, w), dtype=bool),
        )
    acc = np.zeros((h * w, cls), dtype=np.float64)
    votes = np.zeros(h * w, dtype=np.int64)
    for mask, p in zip(masks.masks, region_probs):
        if p is None:
            continue
        fg = mask.foreground_flat
        acc[fg] += np.asarray(p, dtype=np.float64)
        votes[fg] += 1
    void = votes == 0
    mean = np.zeros_like(acc)
    covered = ~void
    mean[covered] = acc[covered] / votes[covered, None]
    labels = np.argmax(mean, axis=1)
    return PixelPrediction(
        dims=masks.dims,
        labels=labels.reshape(h, w),
        void=void.reshape(h, w),
        probs=mean.reshape(h, w, cls),
    )


def miou(pred: PixelPrediction, gt: LabelMap) -> IouReport:
    """IoU per class and their mean, skipping GT ignore pixels.

    Void predictions land in the trailing confusion column and count
    against the union of every GT class they collide with.
    """
    if pred.dims != gt.dims:
        raise DimsMismatchError(f"pred dims {pred.dims} != gt {gt.dims}")
    scored = gt.labels != IGNORE_LABEL
    num = gt.num_classes
    if (pred.labels[scored & ~pred.void] >= num).any():
        num = int(pred.labels[scored & ~pred.void].max()) + 1
    conf = np.zeros((num, num + 1), dtype=np.int64)
    if scored.any():
        g = gt.labels[scored].astype(np.int64)
        p = np.where(pred.void[scored], num, pred.labels[scored])
        conf = np.bincount(g * (num + 1) + p, minlength=num * (num + 1)).reshape(
            num, num + 1
        )
    gt_totals = conf.sum(axis=1)
    pred_totals = conf[:, :num].sum(axis=0)
    class_ids = []
    ious = []
    for c in range(num):
        if gt_totals[c] == 0 and pred_totals[c] == 0:
            continue
        inter = conf[c, c]
        union = gt_totals[c] + pred_totals[c] - inter
        class_ids.append(c)
        ious.append(float(inter / union))
    mean = float(np.mean(ious)) if ious else None
    return IouReport(tuple(class_ids), tuple(ious), mean, conf)


def oracle_eval(masks: MaskSet, gt: LabelMap) -> IouReport:
    """Score the mask set with per-region GT label fractions as distributions."""
    probs = [oracle_region_probs(m, gt) for m in masks.masks]
    pred = predict_pixels(masks, probs, num_classes=gt.num_classes)
    return miou(pred, gt)
