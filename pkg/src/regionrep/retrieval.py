"""Exact region-vector search with max-region image scoring, mAP, P@k.

An image's score for a query is the best dot product over its regions;
images rank by descending score with ascending image_id breaking ties.
Search is exact: blocked matrix-vector products accumulated in float64.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .core import ConfigError, DimsMismatchError, FeatureGrid, RegionMask, RegionVector
from .pooling import Reducer, pool_region, upsample_features

_BLOCK_ROWS = 4096


@dataclass(frozen=True)
class RetrievalIndex:
    """Immutable row-major store of region vectors with parallel id tables."""

    matrix: np.ndarray  # (n, d) float32, unit rows when normalize
    image_ids: np.ndarray  # (n,) int64
    region_ids: np.ndarray  # (n,) int64
    normalize: bool

    def __post_init__(self):
        n, _ = self.matrix.shape
        if self.image_ids.shape != (n,) or self.region_ids.shape != (n,):
            raise DimsMismatchError("id tables must match matrix rows")
        self.matrix.setflags(write=False)
        self.image_ids.setflags(write=False)
        self.region_ids.setflags(write=False)

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    def __len__(self) -> int:
        return self.matrix.shape[0]


@dataclass(frozen=True)
class RankedEntry:
    image_id: int
    score: float
    best_region_id: int


@dataclass(frozen=True)
class RankedResult:
    """Non-increasing scores, one entry per image; universe = all indexed images."""

    entries: tuple[RankedEntry, ...]
    universe: frozenset[int]

    def __post_init__(self):
        scores = [e.score for e in self.entries]
        if any(b > a for a, b in zip(scores, scores[1:])):
            raise ConfigError("entries must have non-increasing scores")

    def __iter__(self):
        return iter(self.entries)

    def __len__(self) -> int:
        return len(self.entries)


def build_index(vectors: Sequence[RegionVector], normalize: bool = False) -> RetrievalIndex:
    """Stack region vectors row-major; optionally scale rows to unit L2."""
    if len(vectors) == 0:
        raise ConfigError("cannot index zero vectors")
    dim = vectors[0].values.shape[0]
    for v in vectors:
        if v.values.shape[0] != dim:
            raise DimsMismatchError(
                f"vector dim {v.values.shape[0]} != {dim}"
            )
    matrix = np.stack([v.values for v in vectors]).astype(np.float32, copy=True)
    if normalize:
        norms = np.linalg.norm(matrix.astype(np.float64), axis=1)
        if (norms == 0).any():
            bad = int(np.flatnonzero(norms == 0)[0])
            raise ConfigError(f"zero vector at row {bad} cannot be normalized")
        matrix = (matrix / norms[:, None]).astype(np.float32)
    return RetrievalIndex(
        matrix=matrix,
        image_ids=np.array([v.image_id for v in vectors], dtype=np.int64),
        region_ids=np.array([v.region_id for v in vectors], dtype=np.int64),
        normalize=normalize,
    )


def _scores(index: RetrievalIndex, q: np.ndarray) -> np.ndarray:
    # blocked f64 accumulation keeps large databases reproducible
    out = np.empty(len(index), dtype=np.float64)
    q64 = q.astype(np.float64)
    for start in range(0, len(index), _BLOCK_ROWS):
        block = index.matrix[start : start + _BLOCK_ROWS]
        out[start : start + block.shape[0]] = block.astype(np.float64) @ q64
    return out


def query(index: RetrievalIndex, q: RegionVector | np.ndarray, top_k: int) -> RankedResult:
    """Rank images by their best region's dot product with q.

    Ties in score break by ascending image_id; the reported best region is
    the lowest-index matching row. Returns at most top_k entries.
    """
    if top_k < 1:
        raise ConfigError(f"top_k must be >= 1, got {top_k}")
    qv = q.values if isinstance(q, RegionVector) else np.asarray(q, dtype=np.float32)
    if qv.ndim != 1 or qv.shape[0] != index.dim:
        raise DimsMismatchError(f"query dim {qv.shape} != index dim {index.dim}")
    scores = _scores(index, qv)
    uniq, inverse = np.unique(index.image_ids, return_inverse=True)
    best = np.full(uniq.size, -np.inf)
    np.maximum.at(best, inverse, scores)
    best_row = np.full(uniq.size, len(index), dtype=np.int64)
    at_max = scores == best[inverse]
    np.minimum.at(best_row, inverse[at_max], np.flatnonzero(at_max))
    order = np.lexsort((uniq, -best))
    entries = tuple(
        RankedEntry(
            image_id=int(uniq[i]),
            score=float(best[i]),
            best_region_id=int(index.region_ids[best_row[i]]),
        )
        for i in order[:top_k]
    )
    return RankedResult(entries=entries, universe=frozenset(int(u) for u in uniq))


def query_from_mask(grid: FeatureGrid, mask: RegionMask) -> RegionVector:
    """Average-pool upsampled features under the mask into a query vector."""
    return pool_region(upsample_features(grid), mask, reducer=Reducer.AVERAGE)


def average_precision(ranked: RankedResult, relevant: Iterable[int]) -> float:
    """AP over the ranking; unretrieved relevant images contribute zero.

    Denominator counts relevant images present in the index universe, so a
    truncated ranking is penalized for the relevant images it dropped.
    """
    rel = frozenset(relevant)
    if not rel:
        raise ConfigError("relevant set must be non-empty")
    denom = len(rel & ranked.universe)
    if denom == 0:
        return 0.0
    hits = 0
    total = 0.0
    for rank, entry in enumerate(ranked.entries, start=1):
        if entry.image_id in rel:
            hits += 1
            total += hits / rank
    return total / denom


def precision_at_k(ranked: RankedResult, relevant: Iterable[int], k: int = 50) -> float:
    """|relevant in top-k| / k; the denominator stays k past the database size."""
    if k < 1:
        raise ConfigError(f"k must be >= 1, got {k}")
    rel = frozenset(relevant)
    hits = sum(1 for entry in ranked.entries[:k] if entry.image_id in rel)
    return hits / k


def mean_average_precision(aps_by_class: Mapping[object, Sequence[float]]) -> float:
    """Average APs within each class, then across classes."""
    if not aps_by_class:
        raise ConfigError("no classes to average")
    means = []
    for cls, aps in aps_by_class.items():
        if len(aps) == 0:
            raise ConfigError(f"class {cls!r} has no queries")
        means.append(float(np.mean(aps)))
    return float(np.mean(means))
