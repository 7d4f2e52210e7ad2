"""Superpixel segmentation by local k-means over CIELAB color + position.

Produces a full partition of the image into at most k 4-connected masks.
Determinism contract: identical input and config give identical output;
assignment ties go to the lowest center index; the per-iteration total
assignment cost (sum of squared distances) never increases.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np

from .core import ConfigError, ImageDims, MaskSet, MaskSource, RegionMask


@dataclass(frozen=True)
class RgbImage:
    dims: ImageDims
    pixels: np.ndarray  # (h, w, 3) uint8

    def __post_init__(self):
        px = np.ascontiguousarray(self.pixels, dtype=np.uint8)
        if px.shape != (self.dims.height, self.dims.width, 3):
            raise ValueError(f"pixel shape {px.shape} does not match dims {self.dims}")
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)


@dataclass(frozen=True)
class SlicConfig:
    num_components: int = 50
    compactness: float = 8.0
    max_iters: int = 10
    min_component_px: int | None = None  # default floor(S^2 / 4)

    def __post_init__(self):
        if self.num_components < 1:
            raise ConfigError(f"num_components must be >= 1, got {self.num_components}")
        if not self.compactness > 0:
            raise ConfigError(f"compactness must be > 0, got {self.compactness}")
        if self.max_iters < 1:
            raise ConfigError(f"max_iters must be >= 1, got {self.max_iters}")
        if self.min_component_px is not None and self.min_component_px < 1:
            raise ConfigError("min_component_px must be >= 1")


# sRGB (D65, 2 degree observer) linear-RGB -> XYZ matrix and white point.
_RGB_TO_XYZ = np.array(
    [
        [0.4124564, 0.3575761, 0.1804375],
        [0.2126729, 0.7151522, 0.0721750],
        [0.0193339, 0.1191920, 0.9503041],
    ]
)
_WHITE = np.array([0.95047, 1.0, 1.08883])
_U8 = np.arange(256) / 255.0
_SRGB_TO_LINEAR = np.where(_U8 <= 0.04045, _U8 / 12.92, ((_U8 + 0.055) / 1.055) ** 2.4)


@numba.njit(cache=True, inline="always")
def _lab_f(t):
    # piecewise CIELAB transfer: cube root above (6/29)**3, linear below
    if t > 0.008856451679035631:
        return t ** (1.0 / 3.0)
    return t * 7.787037037037036 + 0.13793103448275862


@numba.njit(cache=True)
def _lab_planes(px, lut, m, white):
    """Fused sRGB -> CIELAB returning separate L, A, B planes (float64)."""
    h, w = px.shape[0], px.shape[1]
    L = np.empty((h, w), dtype=np.float64)
    A = np.empty((h, w), dtype=np.float64)
    B = np.empty((h, w), dtype=np.float64)
    for r in range(h):
        for c in range(w):
            lr = lut[px[r, c, 0]]
            lg = lut[px[r, c, 1]]
            lb = lut[px[r, c, 2]]
            fx = _lab_f((m[0, 0] * lr + m[0, 1] * lg + m[0, 2] * lb) / white[0])
            fy = _lab_f((m[1, 0] * lr + m[1, 1] * lg + m[1, 2] * lb) / white[1])
            fz = _lab_f((m[2, 0] * lr + m[2, 1] * lg + m[2, 2] * lb) / white[2])
            L[r, c] = 116.0 * fy - 16.0
            A[r, c] = 500.0 * (fx - fy)
            B[r, c] = 200.0 * (fy - fz)
    return L, A, B


def rgb_to_lab(img: RgbImage | np.ndarray) -> np.ndarray:
    """Convert 8-bit sRGB to CIELAB (D65); returns float64 (h, w, 3)."""
    px = img.pixels if isinstance(img, RgbImage) else np.asarray(img, dtype=np.uint8)
    single = px.ndim == 1
    if single:
        px = px.reshape(1, 1, 3)
    L, A, B = _lab_planes(np.ascontiguousarray(px), _SRGB_TO_LINEAR, _RGB_TO_XYZ, _WHITE)
    out = np.stack([L, A, B], axis=-1)
    return out[0, 0] if single else out


def _axis_seeds(n: int, extent: int) -> np.ndarray:
    """n seed coordinates evenly spaced over [0, extent): floor((i+0.5)*extent/n - 0.5)."""
    i = np.arange(n, dtype=np.int64)
    return ((2 * i + 1) * extent - n) // (2 * n)


def seed_grid(dims: ImageDims, num_components: int) -> tuple[np.ndarray, np.ndarray]:
    """Regular seed grid (row coords, col coords) for k components.

    ny is chosen so the grid aspect tracks the image aspect; nx = floor(k / ny).
    ny * nx <= k always holds.
    """
    h, w = dims.height, dims.width
    if h * w < num_components:
        raise ConfigError(f"image {h}x{w} smaller than the {num_components}-component seed grid")
    ny = int(round(math.sqrt(num_components * h / w)))
    ny = max(1, min(ny, num_components, h))
    nx = max(1, min(num_components // ny, w))
    return _axis_seeds(ny, h), _axis_seeds(nx, w)


@numba.njit(cache=True, inline="always")
def _gradient_at(L, A, B, r, c, h, w):
    rm = r - 1 if r > 0 else 0
    rp = r + 1 if r < h - 1 else h - 1
    cm = c - 1 if c > 0 else 0
    cp = c + 1 if c < w - 1 else w - 1
    dxl = L[r, cp] - L[r, cm]
    dxa = A[r, cp] - A[r, cm]
    dxb = B[r, cp] - B[r, cm]
    dyl = L[rp, c] - L[rm, c]
    dya = A[rp, c] - A[rm, c]
    dyb = B[rp, c] - B[rm, c]
    return dxl * dxl + dxa * dxa + dxb * dxb + dyl * dyl + dya * dya + dyb * dyb


@numba.njit(cache=True)
def _perturb_seeds(L, A, B, rows, cols):
    """Move each seed to the strictly lowest-gradient spot in its 3x3 neighborhood.

    Gradient = squared L2 of horizontal + vertical Lab central differences
    with clamped-to-edge neighbors. Ties keep the earlier candidate
    (row-major scan starting at the seed itself).
    """
    h, w = L.shape
    out_r = np.empty(rows.size, dtype=np.int64)
    out_c = np.empty(rows.size, dtype=np.int64)
    for s in range(rows.size):
        br, bc = rows[s], cols[s]
        bg = _gradient_at(L, A, B, br, bc, h, w)
        for dr in range(-1, 2):
            for dc in range(-1, 2):
                r = rows[s] + dr
                c = cols[s] + dc
                if r < 0 or r >= h or c < 0 or c >= w:
                    continue
                g = _gradient_at(L, A, B, r, c, h, w)
                if g < bg:
                    bg = g
                    br, bc = r, c
        out_r[s] = br
        out_c[s] = bc
    return out_r, out_c


@numba.njit(cache=True)
def _assign(L, A, B, centers, labels, best_d, wy, wx, spatial_scale, first):
    """One assignment pass; returns the total cost (sum of best squared D).

    Every pixel's previous center is always a candidate (its distance is
    refreshed up front), so no pixel loses its assignment when centers
    move; together with mean updates this makes the total cost
    non-increasing across iterations. Centers are scanned in descending
    index with a <= compare, so ties go to the lowest covering center.
    """
    h, w = L.shape
    k = centers.shape[0]
    if first:
        for r in range(h):
            for c in range(w):
                best_d[r, c] = np.inf
                labels[r, c] = -1
    else:
        for r in range(h):
            for c in range(w):
                ci = labels[r, c]
                dl = L[r, c] - centers[ci, 0]
                da = A[r, c] - centers[ci, 1]
                db = B[r, c] - centers[ci, 2]
                dr = r - centers[ci, 3]
                dc = c - centers[ci, 4]
                best_d[r, c] = dl * dl + da * da + db * db + (dr * dr + dc * dc) * spatial_scale
    col_d2 = np.empty(w, dtype=np.float64)
    d_buf = np.empty(w, dtype=np.float64)
    for ci in range(k - 1, -1, -1):
        cl = centers[ci, 0]
        ca = centers[ci, 1]
        cb = centers[ci, 2]
        cy = centers[ci, 3]
        cx = centers[ci, 4]
        cr = int(math.floor(cy + 0.5))
        cc = int(math.floor(cx + 0.5))
        r0 = max(0, cr - wy)
        r1 = min(h, cr + wy + 1)
        c0 = max(0, cc - wx)
        c1 = min(w, cc + wx + 1)
        for c in range(c0, c1):
            dc = c - cx
            col_d2[c] = dc * dc * spatial_scale
        for r in range(r0, r1):
            dr = r - cy
            row_d2 = dr * dr * spatial_scale
            # two passes keep the distance loop free of branches so it vectorizes
            for c in range(c0, c1):
                dl = L[r, c] - cl
                da = A[r, c] - ca
                db = B[r, c] - cb
                d_buf[c] = dl * dl + da * da + db * db + row_d2 + col_d2[c]
            for c in range(c0, c1):
                if d_buf[c] <= best_d[r, c]:
                    best_d[r, c] = d_buf[c]
                    labels[r, c] = ci
    cost = 0.0
    for r in range(h):
        for c in range(w):
            cost += best_d[r, c]
    return cost


@numba.njit(cache=True)
def _update_centers(L, A, B, labels, centers):
    k = centers.shape[0]
    sums = np.zeros((k, 5), dtype=np.float64)
    counts = np.zeros(k, dtype=np.int64)
    h, w = labels.shape
    for r in range(h):
        for c in range(w):
            ci = labels[r, c]
            sums[ci, 0] += L[r, c]
            sums[ci, 1] += A[r, c]
            sums[ci, 2] += B[r, c]
            sums[ci, 3] += r
            sums[ci, 4] += c
            counts[ci] += 1
    for ci in range(k):
        if counts[ci] > 0:
            for j in range(5):
                centers[ci, j] = sums[ci, j] / counts[ci]


@numba.njit(cache=True)
def _diff_and_copy(labels, prev):
    h, w = labels.shape
    changed = 0
    for r in range(h):
        for c in range(w):
            if labels[r, c] != prev[r, c]:
                changed += 1
                prev[r, c] = labels[r, c]
    return changed


@numba.njit(cache=True)
def _renumber_first_seen(flat, upper):
    """Relabel flat group ids to 0..n-1 in order of first appearance, in place."""
    remap = np.full(upper, -1, dtype=np.int64)
    count = 0
    for i in range(flat.size):
        v = flat[i]
        if remap[v] < 0:
            remap[v] = count
            count += 1
        flat[i] = remap[v]
    return count


@numba.njit(cache=True)
def _components(labels):
    """4-connected components of equal-label pixels, ids in first-pixel scan order.

    Returns (comp id per pixel, sizes, slic label per component, first flat
    pixel per component). Single scan: a pixel joins the component of its
    left or top neighbor when labels match (union when both match).
    """
    h, w = labels.shape
    n = h * w
    comp = np.full(n, -1, dtype=np.int64)
    parent = np.empty(n, dtype=np.int64)  # over provisional component ids
    count = 0
    for r in range(h):
        base = r * w
        for c in range(w):
            i = base + c
            left = -1
            top = -1
            if c > 0 and labels[r, c - 1] == labels[r, c]:
                left = comp[i - 1]
                while parent[left] != left:
                    left = parent[left]
            if r > 0 and labels[r - 1, c] == labels[r, c]:
                top = comp[i - w]
                while parent[top] != top:
                    top = parent[top]
            if left < 0 and top < 0:
                comp[i] = count
                parent[count] = count
                count += 1
            elif left >= 0 and (top < 0 or top == left):
                comp[i] = left
            elif left < 0:
                comp[i] = top
            else:
                # both neighbors present with distinct roots: union to the lower id
                lo = left if left < top else top
                hi = top if left < top else left
                parent[hi] = lo
                comp[i] = lo
    # resolve provisional ids to roots, then renumber roots in scan order
    remap = np.full(count, -1, dtype=np.int64)
    final_count = 0
    for i in range(n):
        ci = comp[i]
        while parent[ci] != ci:
            ci = parent[ci]
        comp[i] = ci
        if remap[ci] < 0:
            remap[ci] = final_count
            final_count += 1
        comp[i] = remap[ci]
    sizes = np.zeros(final_count, dtype=np.int64)
    comp_label = np.full(final_count, -1, dtype=np.int64)
    first_px = np.full(final_count, -1, dtype=np.int64)
    for i in range(n):
        ci = comp[i]
        sizes[ci] += 1
        if first_px[ci] < 0:
            first_px[ci] = i
            comp_label[ci] = labels[i // w, i % w]
    return comp, sizes, comp_label, first_px


@numba.njit(cache=True)
def _resolve_orphans(comp, sizes, comp_label, first_px, w, min_px):
    """Assign each component a final group, merging orphans away.

    Keepers: the component containing pixel 0 always keeps its group; for
    every other slic label the largest component (ties: lowest component
    id) with size >= min_px keeps its own group. Any other component is an
    orphan and adopts the final group of the component owning the left
    (else top) neighbor of its first pixel; that component always precedes
    it in scan order, so groups resolve in one ascending pass. The result
    has at most one group per slic label, hence at most k groups.
    """
    ncomp = sizes.size
    nlabels = comp_label.max() + 1
    largest = np.full(nlabels, -1, dtype=np.int64)
    for cid in range(ncomp):
        lbl = comp_label[cid]
        if largest[lbl] < 0 or sizes[cid] > sizes[largest[lbl]]:
            largest[lbl] = cid
    keeper = np.zeros(ncomp, dtype=np.bool_)
    keeper[0] = True
    for lbl in range(nlabels):
        cid = largest[lbl]
        if cid >= 0 and sizes[cid] >= min_px and comp_label[0] != lbl:
            keeper[cid] = True
    final = np.full(ncomp, -1, dtype=np.int64)
    for cid in range(ncomp):
        if keeper[cid]:
            final[cid] = cid
        else:
            p = first_px[cid]
            q = p - 1 if p % w > 0 else p - w
            final[cid] = final[comp[q]]
    return final


@numba.njit(cache=True)
def _label_runs(values):
    """Segment boundaries of a flat array: (starts, ends, value per segment)."""
    n = values.size
    nseg = 1
    for i in range(1, n):
        if values[i] != values[i - 1]:
            nseg += 1
    starts = np.empty(nseg, dtype=np.int64)
    ends = np.empty(nseg, dtype=np.int64)
    vals = np.empty(nseg, dtype=np.int64)
    m = 0
    starts[0] = 0
    vals[0] = values[0]
    for i in range(1, n):
        if values[i] != values[i - 1]:
            ends[m] = i
            m += 1
            starts[m] = i
            vals[m] = values[i]
    ends[m] = n
    return starts, ends, vals


def _masks_from_grid(flat: np.ndarray, n_masks: int, dims: ImageDims, source: MaskSource) -> list[RegionMask]:
    """Build one RegionMask per final id from a flat id grid, in id order."""
    starts, ends, vals = _label_runs(flat)
    total = dims.pixels
    masks: list[RegionMask] = []
    for mid in range(n_masks):
        sel = vals == mid
        ss = starts[sel]
        ee = ends[sel]
        runs = np.empty(2 * ss.size + 1, dtype=np.int64)
        runs[0] = ss[0]
        runs[1::2] = ee - ss
        runs[2::2][:-1] = ss[1:] - ee[:-1]
        runs[-1] = total - ee[-1]
        if runs[-1] == 0:
            runs = runs[:-1]
        masks.append(RegionMask(dims, runs, source=source))
    return masks


def slic_segment(img: RgbImage, cfg: SlicConfig = SlicConfig()) -> MaskSet:
    """Segment an image into at most cfg.num_components 4-connected superpixels."""
    masks, _ = slic_segment_with_costs(img, cfg)
    return masks


def slic_segment_with_costs(img: RgbImage, cfg: SlicConfig = SlicConfig()) -> tuple[MaskSet, list[float]]:
    """slic_segment plus the per-iteration assignment costs (sum of squared D)."""
    dims = img.dims
    h, w = dims.height, dims.width
    L, A, B = _lab_planes(img.pixels, _SRGB_TO_LINEAR, _RGB_TO_XYZ, _WHITE)

    seed_rows, seed_cols = seed_grid(dims, cfg.num_components)
    ny, nx = seed_rows.size, seed_cols.size
    grid_r = np.repeat(seed_rows, nx)
    grid_c = np.tile(seed_cols, ny)
    pr, pc = _perturb_seeds(L, A, B, grid_r, grid_c)

    k = ny * nx
    s = math.sqrt(h * w / cfg.num_components)
    spatial_scale = (cfg.compactness / s) ** 2
    wy = max(math.ceil(s), math.ceil(h / ny))
    wx = max(math.ceil(s), math.ceil(w / nx))
    min_px = cfg.min_component_px if cfg.min_component_px is not None else max(1, int(s * s / 4))

    centers = np.empty((k, 5), dtype=np.float64)
    centers[:, 0] = L[pr, pc]
    centers[:, 1] = A[pr, pc]
    centers[:, 2] = B[pr, pc]
    centers[:, 3] = pr.astype(np.float64)
    centers[:, 4] = pc.astype(np.float64)

    labels = np.empty((h, w), dtype=np.int64)
    best_d = np.empty((h, w), dtype=np.float64)
    prev = np.full((h, w), -1, dtype=np.int64)
    costs: list[float] = []
    for it in range(cfg.max_iters):
        cost = _assign(L, A, B, centers, labels, best_d, wy, wx, spatial_scale, it == 0)
        costs.append(float(cost))
        changed = _diff_and_copy(labels, prev)
        _update_centers(L, A, B, labels, centers)
        if changed == 0:
            break
    if labels.min() < 0:
        raise RuntimeError("search windows failed to cover the image")

    comp, sizes, comp_label, first_px = _components(labels)
    final = _resolve_orphans(comp, sizes, comp_label, first_px, w, min_px)
    flat = final[comp]

    # Renumber final groups by first-pixel scan order for deterministic output.
    n_groups = _renumber_first_seen(flat, sizes.size)

    masks = _masks_from_grid(flat, n_groups, dims, MaskSource.SLIC)
    return MaskSet(dims, masks), costs


def warm_up() -> None:
    """Compile the jitted kernels on a tiny input (call before timing)."""
    rng = np.random.default_rng(0)
    px = rng.integers(0, 256, size=(16, 16, 3), dtype=np.uint8)
    slic_segment(RgbImage(ImageDims(16, 16), px), SlicConfig(num_components=4, max_iters=2))
