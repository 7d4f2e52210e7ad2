"""Seeded synthetic scenes with exact ground truth for pipeline checks.

A scene is a background plus non-overlapping rectangles and ellipses,
each a flat distinct color and a known class, with a mask set exactly
aligned to the label map. Features plant a scaled one-hot of the class
at each patch center plus a shared spatial ramp and Gaussian noise, so
pooling, labeling, training, and retrieval have known optimal behavior.

The retrieval generator plants scaled orthogonal class prototypes in a
distractor sea; with zero noise every planted dot product dominates the
distractors, so mAP is exactly 1.0.
"""
from __future__ import annotations

import colorsys
import math
from dataclasses import dataclass

import numpy as np

from .core import (
    ConfigError,
    FeatureGrid,
    ImageDims,
    LabelMap,
    MaskSet,
    MaskSource,
    RegionVector,
    rle_encode,
)
from .slic import RgbImage

_PLACEMENT_ATTEMPTS = 100


@dataclass(frozen=True)
class Scene:
    image: RgbImage
    labels: LabelMap
    masks: MaskSet  # aligned to the label map, one region per segment
    grid: FeatureGrid


def _segment_colors(count: int) -> np.ndarray:
    # evenly spaced hues stay distinct for any reasonable segment count
    cols = [colorsys.hsv_to_rgb(i / count, 0.85, 0.95) for i in range(count)]
    return (np.array(cols) * 255).astype(np.uint8)


def feature_dim(num_classes: int) -> int:
    """One channel per class plus two spare, rounded up to a multiple of 4."""
    return 4 * math.ceil((num_classes + 2) / 4)


def gen_scene(
    seed: int,
    dims: ImageDims = ImageDims(64, 64),
    num_segments: int = 10,
    num_classes: int = 6,
    patch: int = 2,
    feature_scale: float = 40.0,
    noise_std: float = 1.0,
    ramp_scale: float = 1.0,
) -> Scene:
    """Generate one scene; identical seeds give byte-identical output.

    Segment 0 is the background; segments 1..n-1 are shapes placed without
    overlap (packing failure after retries raises ConfigError). Segment i
    has class i % num_classes.
    """
    if num_segments < num_classes:
        raise ConfigError(
            f"num_segments {num_segments} < num_classes {num_classes}"
        )
    if num_segments < 1 or num_classes < 1:
        raise ConfigError("num_segments and num_classes must be >= 1")
    h, w = dims.height, dims.width
    if h % patch or w % patch:
        raise ConfigError(f"dims {h}x{w} not divisible by patch {patch}")
    rng = np.random.default_rng(seed)
    seg = np.zeros((h, w), dtype=np.int32)
    yy, xx = np.mgrid[0:h, 0:w]
    for i in range(1, num_segments):
        placed = False
        for _ in range(_PLACEMENT_ATTEMPTS):
            sh = int(rng.integers(h // 8, max(h // 3, h // 8 + 1)))
            sw = int(rng.integers(w // 8, max(w // 3, w // 8 + 1)))
            top = int(rng.integers(0, h - sh))
            left = int(rng.integers(0, w - sw))
            if rng.random() < 0.5:
                shape = np.zeros((h, w), dtype=bool)
                shape[top : top + sh, left : left + sw] = True
            else:
                cy, cx = top + sh / 2.0, left + sw / 2.0
                shape = ((yy - cy) / (sh / 2.0)) ** 2 + ((xx - cx) / (sw / 2.0)) ** 2 <= 1.0
            if not shape.any() or (seg[shape] != 0).any():
                continue
            seg[shape] = i
            placed = True
            break
        if not placed:
            raise ConfigError(
                f"could not place segment {i} of {num_segments} in {h}x{w} "
                f"after {_PLACEMENT_ATTEMPTS} attempts; reduce num_segments"
            )
    classes = np.arange(num_segments, dtype=np.int64) % num_classes
    labels = LabelMap(classes[seg].astype(np.uint16), num_classes=num_classes)
    colors = _segment_colors(num_segments)
    image = RgbImage(dims, colors[seg])
    masks = MaskSet(
        dims,
        [rle_encode(seg == i, source=MaskSource.SYNTHETIC) for i in range(num_segments)],
        list(range(num_segments)),
    )
    gh, gw = h // patch, w // patch
    d = feature_dim(num_classes)
    centers = seg[patch // 2 :: patch, patch // 2 :: patch]
    data = np.zeros((gh, gw, d))
    idx = np.arange(gh * gw)
    data.reshape(-1, d)[idx, classes[centers].ravel()] = feature_scale
    gy, gx = np.mgrid[0:gh, 0:gw]
    ramp = ramp_scale * (gy / gh + gx / gw)
    data += ramp[:, :, None]
    data += noise_std * rng.standard_normal((gh, gw, d))
    grid = FeatureGrid(
        data.transpose(2, 0, 1).astype(np.float32), patch=patch, image_dims=dims
    )
    return Scene(image=image, labels=labels, masks=masks, grid=grid)


@dataclass(frozen=True)
class RetrievalDb:
    """Planted class-clustered vectors plus queries and relevance sets."""

    vectors: tuple[RegionVector, ...]
    queries: dict[int, tuple[RegionVector, ...]]  # class -> query vectors
    relevant: dict[int, frozenset[int]]  # class -> image ids containing it
    num_images: int


def gen_retrieval_db(
    seed: int,
    num_images: int = 40,
    num_classes: int = 5,
    queries_per_class: int = 3,
    regions_per_image: int = 6,
    noise_std: float = 0.0,
    prototype_scale: float = 10.0,
    present_prob: float = 0.35,
    distractor_only: bool = False,
) -> RetrievalDb:
    """Plant prototype vectors for classes into images; fill with distractors.

    Relevance marks the images assigned each class. Under distractor_only
    the assignment still happens but no prototype is written, so rankings
    carry no signal and mAP matches the random baseline.
    """
    if num_images < 1 or num_classes < 1 or queries_per_class < 1:
        raise ConfigError("num_images, num_classes, queries_per_class must be >= 1")
    if regions_per_image < 1:
        raise ConfigError("regions_per_image must be >= 1")
    rng = np.random.default_rng(seed)
    d = num_classes
    proto = prototype_scale * np.eye(d)
    present: dict[int, set[int]] = {c: set() for c in range(num_classes)}
    for c in range(num_classes):
        present[c].add(c % num_images)  # every class exists somewhere
    for i in range(num_images):
        for c in range(num_classes):
            if rng.random() < present_prob:
                present[c].add(i)
    vectors: list[RegionVector] = []
    for i in range(num_images):
        mine = sorted(c for c in range(num_classes) if i in present[c])
        rid = 0
        if not distractor_only:
            for c in mine:
                v = proto[c] + noise_std * rng.standard_normal(d)
                vectors.append(RegionVector(i, rid, v.astype(np.float32)))
                rid += 1
        while rid < regions_per_image:
            v = rng.uniform(-1.0, 1.0, size=d)
            vectors.append(RegionVector(i, rid, v.astype(np.float32)))
            rid += 1
    queries = {
        c: tuple(
            RegionVector(
                0, q, (proto[c] + noise_std * rng.standard_normal(d)).astype(np.float32)
            )
            for q in range(queries_per_class)
        )
        for c in range(num_classes)
    }
    relevant = {c: frozenset(present[c]) for c in range(num_classes)}
    return RetrievalDb(
        vectors=tuple(vectors),
        queries=queries,
        relevant=relevant,
        num_images=num_images,
    )


def expected_random_ap(num_images: int, num_relevant: int) -> float:
    """Mean AP of a uniformly random ranking with R relevant among N."""
    n, r = num_images, num_relevant
    if r < 1 or n < 1 or r > n:
        raise ConfigError(f"need 1 <= relevant <= images, got {r}, {n}")
    if n == 1:
        return 1.0
    harm = float(np.sum(1.0 / np.arange(1, n + 1)))
    return harm / n + (r - 1) * (n - harm) / (n * (n - 1))
