"""Multi-view and video token assembly.

Regions from several images of one scene (or frames of one video) become a
single token sequence: each region's pooled vector, optionally merged with
sinusoidal embeddings of its 2D centroid and mean 3D location, ordered
deterministically, padded to a fixed length with an attention mask.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import ConfigError, DimsMismatchError, ImageDims, MaskSet, RegionMask, RegionVector

PAD_PROVENANCE = (-1, -1, -1)


@dataclass(frozen=True)
class PointMap:
    """Per-pixel world coordinates with a validity flag per pixel."""

    dims: ImageDims
    xyz: np.ndarray  # (h, w, 3) float32, meters
    valid: np.ndarray  # (h, w) bool

    def __post_init__(self):
        h, w = self.dims.height, self.dims.width
        xyz = np.ascontiguousarray(self.xyz, dtype=np.float32)
        valid = np.ascontiguousarray(self.valid, dtype=bool)
        if xyz.shape != (h, w, 3):
            raise ValueError(f"xyz shape {xyz.shape} does not match dims {self.dims}")
        if valid.shape != (h, w):
            raise ValueError(f"valid shape {valid.shape} does not match dims {self.dims}")
        if not np.isfinite(xyz[valid]).all():
            raise ValueError("valid points must have finite coordinates")
        xyz.setflags(write=False)
        valid.setflags(write=False)
        object.__setattr__(self, "xyz", xyz)
        object.__setattr__(self, "valid", valid)


@dataclass(frozen=True)
class TokenBatch:
    """Fixed-length token sequence; masked-out rows are all-zero."""

    tokens: np.ndarray  # (T, d') float32
    attention_mask: np.ndarray  # (T,) bool
    provenance: tuple[tuple[int, int, int], ...]  # (image_id, region_id, frame_index)

    def __post_init__(self):
        tokens = np.ascontiguousarray(self.tokens, dtype=np.float32)
        mask = np.ascontiguousarray(self.attention_mask, dtype=bool)
        if tokens.ndim != 2 or mask.shape != (tokens.shape[0],):
            raise ValueError("tokens must be (T, d) with a length-T mask")
        if len(self.provenance) != tokens.shape[0]:
            raise ValueError("provenance must have one entry per token")
        if tokens[~mask].any():
            raise ValueError("masked-out tokens must be all-zero")
        tokens.setflags(write=False)
        mask.setflags(write=False)
        object.__setattr__(self, "tokens", tokens)
        object.__setattr__(self, "attention_mask", mask)
        object.__setattr__(self, "provenance", tuple(self.provenance))

    @property
    def real_count(self) -> int:
        return int(self.attention_mask.sum())


def _freq_ladder(count: int) -> np.ndarray:
    """Geometric frequencies from 1 to 1e4; a single frequency stays at 1."""
    if count == 1:
        return np.ones(1)
    return 10.0 ** (4.0 * np.arange(count) / (count - 1))


def sincos_embed(coords: np.ndarray, emb_dim: int) -> np.ndarray:
    """Sinusoidal embedding of coords (n, axes) in [0,1]; returns (n, emb_dim) f32.

    Layout is axis-major: all (sin, cos) frequency pairs of axis 0, then
    axis 1, and so on. emb_dim must be divisible by 2 * axes.
    """
    coords = np.asarray(coords, dtype=np.float64)
    n, axes = coords.shape
    if emb_dim % (2 * axes) != 0:
        raise ConfigError(f"emb_dim {emb_dim} not divisible by {2 * axes}")
    nf = emb_dim // (2 * axes)
    freqs = _freq_ladder(nf)
    angles = coords[:, :, None] * freqs  # (n, axes, nf)
    out = np.empty((n, axes, nf, 2))
    out[..., 0] = np.sin(angles)
    out[..., 1] = np.cos(angles)
    return out.reshape(n, emb_dim).astype(np.float32)


def embed_2d(mask: RegionMask, emb_dim: int) -> np.ndarray:
    """Sinusoidal embedding of the mask centroid normalized to [0,1]^2.

    The centroid row cy maps to (cy + 0.5) / h (so a full-image mask sits
    at exactly 0.5), likewise for columns. emb_dim must be divisible by 4.
    """
    if emb_dim % 4 != 0:
        raise ConfigError(f"2d embedding dim must be divisible by 4, got {emb_dim}")
    cy, cx = mask.centroid
    coords = np.array([[(cy + 0.5) / mask.dims.height, (cx + 0.5) / mask.dims.width]])
    return sincos_embed(coords, emb_dim)[0]


def scene_bbox(point_maps: Sequence[PointMap]) -> tuple[np.ndarray, np.ndarray] | None:
    """(lo, hi) corners over all valid points, or None when nothing is valid."""
    lo = np.full(3, np.inf)
    hi = np.full(3, -np.inf)
    any_valid = False
    for pm in point_maps:
        pts = pm.xyz[pm.valid]
        if pts.size == 0:
            continue
        any_valid = True
        lo = np.minimum(lo, pts.min(axis=0))
        hi = np.maximum(hi, pts.max(axis=0))
    return (lo, hi) if any_valid else None


def embed_3d(
    mask: RegionMask,
    points: PointMap,
    emb_dim: int,
    bbox: tuple[np.ndarray, np.ndarray] | None = None,
) -> tuple[np.ndarray, bool]:
    """Sinusoidal embedding of the mask's mean valid 3D point.

    The mean is normalized to [0,1]^3 by the bounding box (per-map when
    bbox is None, caller-supplied for whole scenes; degenerate axes map to
    0.5). Returns (embedding, True), or (zeros, False) when the mask
    covers no valid point. emb_dim must be divisible by 6.
    """
    if emb_dim % 6 != 0:
        raise ConfigError(f"3d embedding dim must be divisible by 6, got {emb_dim}")
    if mask.dims != points.dims:
        raise DimsMismatchError(f"mask dims {mask.dims} != point map dims {points.dims}")
    flat_valid = points.valid.ravel()[mask.foreground_flat]
    if not flat_valid.any():
        return np.zeros(emb_dim, dtype=np.float32), False
    pts = points.xyz.reshape(-1, 3)[mask.foreground_flat[flat_valid]]
    mean = pts.astype(np.float64).mean(axis=0)
    if bbox is None:
        bbox = scene_bbox([points])
    lo, hi = np.asarray(bbox[0], dtype=np.float64), np.asarray(bbox[1], dtype=np.float64)
    span = hi - lo
    norm = np.where(span > 0, np.clip((mean - lo) / np.where(span > 0, span, 1.0), 0.0, 1.0), 0.5)
    return sincos_embed(norm[None, :], emb_dim)[0], True


@dataclass(frozen=True)
class SceneImage:
    """One image's regions inside a scene."""

    image_id: int
    vectors: tuple[RegionVector, ...]
    masks: MaskSet
    points: PointMap | None = None

    def __post_init__(self):
        object.__setattr__(self, "vectors", tuple(self.vectors))
        if len(self.vectors) > len(self.masks):
            raise ValueError("more vectors than masks")


@dataclass(frozen=True)
class SceneConfig:
    emb_2d: int = 0  # 0 disables
    emb_3d: int = 0
    merge: str = "concat"  # "concat" widens tokens; "add" requires emb dims == d

    def __post_init__(self):
        if self.merge not in ("concat", "add"):
            raise ConfigError(f"merge must be concat or add, got {self.merge!r}")
        if self.emb_2d < 0 or self.emb_3d < 0:
            raise ConfigError("embedding dims must be >= 0")


def _mask_by_region_id(image: SceneImage) -> dict[int, RegionMask]:
    return dict(zip(image.masks.ids, image.masks.masks))


def assemble_scene_tokens(
    images: Sequence[SceneImage],
    cfg: SceneConfig = SceneConfig(),
    pad_to: int | None = None,
) -> TokenBatch:
    """Merge every region of every scene image into one ordered token batch.

    Tokens are ordered by (image_id, region_id); provenance keeps the image
    order index as frame_index. With embeddings disabled the tokens are the
    raw region vectors.
    """
    images = sorted(images, key=lambda im: im.image_id)
    if len({im.image_id for im in images}) != len(images):
        raise ConfigError("duplicate image_id in scene")
    bbox = None
    if cfg.emb_3d:
        bbox = scene_bbox([im.points for im in images if im.points is not None])
    rows = []
    provenance = []
    for frame_index, image in enumerate(images):
        by_id = _mask_by_region_id(image)
        for vec in sorted(image.vectors, key=lambda v: v.region_id):
            if (cfg.emb_2d or cfg.emb_3d) and vec.region_id not in by_id:
                raise ConfigError(f"region {vec.region_id} has no mask in image {image.image_id}")
            parts = [vec.values.astype(np.float64)]
            if cfg.emb_2d:
                parts.append(embed_2d(by_id[vec.region_id], cfg.emb_2d).astype(np.float64))
            if cfg.emb_3d:
                if image.points is None or bbox is None:
                    parts.append(np.zeros(cfg.emb_3d))
                else:
                    e3, _ = embed_3d(by_id[vec.region_id], image.points, cfg.emb_3d, bbox)
                    parts.append(e3.astype(np.float64))
            if cfg.merge == "concat":
                row = np.concatenate(parts)
            else:
                row = parts[0]
                for p in parts[1:]:
                    if p.shape != row.shape:
                        raise ConfigError(
                            f"additive merge needs embedding dim {row.shape[0]}, got {p.shape[0]}"
                        )
                    row = row + p
            rows.append(row.astype(np.float32))
            provenance.append((image.image_id, vec.region_id, frame_index))
    return _pad_batch(rows, provenance, pad_to)


def _pad_batch(
    rows: list[np.ndarray],
    provenance: list[tuple[int, int, int]],
    pad_to: int | None,
) -> TokenBatch:
    n = len(rows)
    total = n if pad_to is None else pad_to
    if n > total:
        raise ConfigError(f"{n} tokens exceed pad_to={total}")
    if n == 0:
        raise ConfigError("no tokens to assemble")
    d = rows[0].shape[0]
    tokens = np.zeros((total, d), dtype=np.float32)
    for i, row in enumerate(rows):
        if row.shape != (d,):
            raise DimsMismatchError(f"token {i} has dim {row.shape[0]}, expected {d}")
        tokens[i] = row
    mask = np.zeros(total, dtype=bool)
    mask[:n] = True
    provenance = provenance + [PAD_PROVENANCE] * (total - n)
    return TokenBatch(tokens, mask, tuple(provenance))


def sample_frames(total_frames: int, n: int = 8) -> list[int]:
    """n evenly spaced frame indices over [0, total_frames); repeats when short.

    Index i maps to round-half-up(i * (total - 1) / (n - 1)); a single
    sample takes frame 0.
    """
    if total_frames < 1:
        raise ConfigError(f"total_frames must be >= 1, got {total_frames}")
    if n < 1:
        raise ConfigError(f"n must be >= 1, got {n}")
    if n == 1:
        return [0]
    den = 2 * (n - 1)
    return [(2 * i * (total_frames - 1) + (n - 1)) // den for i in range(n)]


@dataclass(frozen=True)
class FrameRegions:
    """Regions of one sampled video frame, with pixel counts for truncation."""

    frame_index: int
    vectors: tuple[RegionVector, ...]
    pixel_counts: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "vectors", tuple(self.vectors))
        object.__setattr__(self, "pixel_counts", tuple(int(p) for p in self.pixel_counts))
        if len(self.vectors) != len(self.pixel_counts):
            raise ValueError("one pixel count per vector required")


def _frame_quotas(counts: list[int], budget: int) -> list[int]:
    """Proportional floor quotas; leftovers go to the largest fractional parts
    (ties to the lowest frame index)."""
    total = sum(counts)
    shares = [budget * c / total for c in counts]
    quotas = [int(s) for s in shares]
    leftover = budget - sum(quotas)
    order = sorted(range(len(counts)), key=lambda f: (-(shares[f] - quotas[f]), f))
    for f in order[:leftover]:
        quotas[f] += 1
    return quotas


def assemble_video_tokens(
    frames: Sequence[FrameRegions],
    pad_to: int = 400,
) -> tuple[TokenBatch, list[tuple[int, int, int]]]:
    """Tokens in (frame, region) order, zero-padded to pad_to with a mask.

    When regions exceed the budget, each frame keeps a proportional share
    of its regions, preferring larger pixel counts (ties to the earlier
    region); dropped provenance triples are returned alongside the batch.
    """
    total = sum(len(f.vectors) for f in frames)
    dropped: list[tuple[int, int, int]] = []
    keep: dict[int, set[int]] = {}
    if total > pad_to:
        nonempty = [i for i, f in enumerate(frames) if f.vectors]
        quotas = _frame_quotas([len(frames[i].vectors) for i in nonempty], pad_to)
        for i, q in zip(nonempty, quotas):
            f = frames[i]
            order = sorted(range(len(f.vectors)), key=lambda j: (-f.pixel_counts[j], j))
            keep[i] = set(order[:q])
    rows = []
    provenance = []
    for i, f in enumerate(frames):
        for j, vec in enumerate(f.vectors):
            entry = (vec.image_id, vec.region_id, f.frame_index)
            if i in keep and j not in keep[i]:
                dropped.append(entry)
                continue
            rows.append(vec.values)
            provenance.append(entry)
    return _pad_batch(rows, provenance, pad_to), dropped
