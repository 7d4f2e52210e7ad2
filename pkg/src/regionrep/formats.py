"""Bit-exact little-endian file formats for every pipeline artifact.

Binary formats open with a 4-byte ASCII magic and a 1-byte version; all
integers and floats are little-endian regardless of host. Mask sets are
JSON with row-major background-first run lengths. Loaders validate before
constructing values and report truncation with the failing byte offset.

magics: RBRF feature grid, RBLM label map, RBRV region vectors,
RBPM point map, RBDC decoder checkpoint, RBRI retrieval index.
"""
from __future__ import annotations

import json
import struct
from typing import Sequence

import numpy as np

from .core import (
    IGNORE_LABEL,
    ConfigError,
    FeatureGrid,
    FormatError,
    ImageDims,
    LabelMap,
    MaskSet,
    MaskSource,
    RegionMask,
    RegionVector,
    TruncatedFileError,
)
from .decoders import Decoder, LinearDecoder, MlpDecoder, TransformerDecoder
from .multi_image import PointMap
from .retrieval import RetrievalIndex

VERSION = 1

_F32 = np.dtype("<f4")
_U16 = np.dtype("<u2")
_I64 = np.dtype("<i8")
_U32_MAX = 0xFFFFFFFF


class _Reader:
    """Cursor over file bytes; EOF raises with the offset that fell short."""

    def __init__(self, data: bytes, path: str):
        self.data = data
        self.path = path
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedFileError(
                f"{self.path}: needed {n} bytes at offset {self.pos}, "
                f"file ends at {len(self.data)}"
            )
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self, count: int = 1):
        vals = struct.unpack(f"<{count}I", self.take(4 * count))
        return vals[0] if count == 1 else vals

    def u8(self) -> int:
        return self.take(1)[0]

    def array(self, dtype: np.dtype, count: int) -> np.ndarray:
        raw = self.take(dtype.itemsize * count)
        return np.frombuffer(raw, dtype=dtype, count=count)

    def done(self):
        if self.pos != len(self.data):
            raise FormatError(
                f"{self.path}: {len(self.data) - self.pos} trailing bytes at offset {self.pos}"
            )


def _check_magic(r: _Reader, magic: bytes):
    got = r.take(4)
    if got != magic:
        raise FormatError(f"{r.path}: bad magic {got!r}, expected {magic!r}")
    ver = r.u8()
    if ver != VERSION:
        raise FormatError(f"{r.path}: unsupported version {ver}")


def _u32_checked(value: int, what: str) -> int:
    if not 0 <= value <= _U32_MAX:
        raise FormatError(f"{what} {value} does not fit an unsigned 32-bit field")
    return value


def _read(path) -> _Reader:
    with open(path, "rb") as fh:
        return _Reader(fh.read(), str(path))


# feature grids -------------------------------------------------------------

def save_feature_grid(grid: FeatureGrid, path) -> None:
    head = struct.pack(
        "<4sB6I",
        b"RBRF",
        VERSION,
        _u32_checked(grid.dim, "feature dim"),
        grid.grid_h,
        grid.grid_w,
        grid.patch,
        grid.image_dims.height,
        grid.image_dims.width,
    )
    with open(path, "wb") as fh:
        fh.write(head)
        fh.write(np.ascontiguousarray(grid.data, dtype=_F32).tobytes())


def load_feature_grid(path) -> FeatureGrid:
    r = _read(path)
    _check_magic(r, b"RBRF")
    d, gh, gw, patch, img_h, img_w = r.u32(6)
    data = r.array(_F32, d * gh * gw).reshape(d, gh, gw)
    r.done()
    try:
        return FeatureGrid(data, patch=patch, image_dims=ImageDims(img_h, img_w))
    except (ValueError, ConfigError) as exc:
        raise FormatError(f"{r.path}: invalid feature grid: {exc}") from exc


# mask sets -----------------------------------------------------------------

def save_mask_set(masks: MaskSet, path) -> None:
    doc = {
        "height": masks.dims.height,
        "width": masks.dims.width,
        "masks": [
            {"id": mid, "source": m.source.value, "rle": list(m.runs)}
            for mid, m in zip(masks.ids, masks.masks)
        ],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, separators=(",", ":"))
        fh.write("\n")


def load_mask_set(path) -> MaskSet:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: not valid JSON: {exc}") from exc
    try:
        dims = ImageDims(int(doc["height"]), int(doc["width"]))
        entries = doc["masks"]
    except (KeyError, TypeError, ConfigError) as exc:
        raise FormatError(f"{path}: missing or invalid height/width/masks: {exc}") from exc
    out, ids = [], []
    for entry in entries:
        try:
            mid = int(entry["id"])
            source = MaskSource(entry["source"])
            runs = [int(x) for x in entry["rle"]]
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"{path}: malformed mask entry: {exc}") from exc
        try:
            out.append(RegionMask(dims, runs, source=source))
        except ValueError as exc:
            raise FormatError(f"{path}: mask id {mid}: {exc}") from exc
        ids.append(mid)
    try:
        return MaskSet(dims, out, ids)
    except (ValueError, ConfigError) as exc:
        raise FormatError(f"{path}: {exc}") from exc


def rle_to_column_major(runs: Sequence[int], dims: ImageDims) -> list[int]:
    """Convert row-major background-first runs to column-major (COCO style)."""
    mask = RegionMask(dims, runs)
    flags = mask.to_bitmap().T.ravel()
    return _runs_from_flags(flags)


def rle_from_column_major(runs: Sequence[int], dims: ImageDims) -> list[int]:
    """Convert column-major background-first runs to row-major."""
    transposed = ImageDims(dims.width, dims.height)
    mask = RegionMask(transposed, runs)
    flags = mask.to_bitmap().T.ravel()
    return _runs_from_flags(flags)


def _runs_from_flags(flags: np.ndarray) -> list[int]:
    edges = np.flatnonzero(np.diff(flags)) + 1
    bounds = np.concatenate(([0], edges, [flags.size]))
    runs = np.diff(bounds).tolist()
    if flags[0]:
        runs.insert(0, 0)
    return runs


# label maps ----------------------------------------------------------------

def save_label_map(gt: LabelMap, path) -> None:
    head = struct.pack(
        "<4sB3I",
        b"RBLM",
        VERSION,
        gt.dims.height,
        gt.dims.width,
        _u32_checked(gt.num_classes, "num_classes"),
    )
    with open(path, "wb") as fh:
        fh.write(head)
        fh.write(np.ascontiguousarray(gt.labels, dtype=_U16).tobytes())


def load_label_map(path) -> LabelMap:
    r = _read(path)
    _check_magic(r, b"RBLM")
    h, w, num_classes = r.u32(3)
    labels = r.array(_U16, h * w).reshape(h, w)
    r.done()
    try:
        return LabelMap(labels, num_classes=num_classes)
    except (ValueError, ConfigError) as exc:
        raise FormatError(f"{r.path}: invalid label map: {exc}") from exc


# region vectors ------------------------------------------------------------

def save_region_vectors(vectors: Sequence[RegionVector], path) -> None:
    if len(vectors) == 0:
        raise ConfigError("refusing to write zero region vectors")
    dim = vectors[0].dim
    parts = [struct.pack("<4sB2I", b"RBRV", VERSION, len(vectors), _u32_checked(dim, "dim"))]
    for v in vectors:
        if v.dim != dim:
            raise FormatError(f"vector dim {v.dim} != {dim}")
        parts.append(
            struct.pack(
                "<2I",
                _u32_checked(v.image_id, "image_id"),
                _u32_checked(v.region_id, "region_id"),
            )
        )
        parts.append(np.ascontiguousarray(v.values, dtype=_F32).tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


def load_region_vectors(path) -> list[RegionVector]:
    r = _read(path)
    _check_magic(r, b"RBRV")
    count, dim = r.u32(2)
    out = []
    for _ in range(count):
        image_id, region_id = r.u32(2)
        values = r.array(_F32, dim)
        try:
            out.append(RegionVector(image_id, region_id, values))
        except ValueError as exc:
            raise FormatError(f"{r.path}: record {len(out)}: {exc}") from exc
    r.done()
    return out


# point maps ----------------------------------------------------------------

def save_point_map(points: PointMap, path) -> None:
    h, w = points.dims.height, points.dims.width
    head = struct.pack("<4sB2I", b"RBPM", VERSION, h, w)
    bits = np.packbits(points.valid.ravel(), bitorder="little")
    with open(path, "wb") as fh:
        fh.write(head)
        fh.write(np.ascontiguousarray(points.xyz, dtype=_F32).tobytes())
        fh.write(bits.tobytes())


def load_point_map(path) -> PointMap:
    r = _read(path)
    _check_magic(r, b"RBPM")
    h, w = r.u32(2)
    xyz = r.array(_F32, h * w * 3).reshape(h, w, 3)
    packed = r.array(np.dtype("u1"), (h * w + 7) // 8)
    r.done()
    valid = np.unpackbits(packed, bitorder="little")[: h * w].reshape(h, w).astype(bool)
    try:
        return PointMap(dims=ImageDims(h, w), xyz=xyz.astype(np.float32), valid=valid)
    except (ValueError, ConfigError) as exc:
        raise FormatError(f"{r.path}: invalid point map: {exc}") from exc


# decoder checkpoints -------------------------------------------------------

_DECODER_CODES = {"linear": 0, "mlp": 1, "transformer": 2}


def save_decoder(decoder: Decoder, path) -> None:
    """Checkpoint as 32-bit floats; reload casts back to float64."""
    meta: list[int]
    if isinstance(decoder, LinearDecoder):
        meta = []
    elif isinstance(decoder, MlpDecoder):
        meta = [decoder.hidden]
    elif isinstance(decoder, TransformerDecoder):
        meta = [decoder.blocks, decoder.heads]
    else:
        raise ConfigError(f"unknown decoder type {type(decoder).__name__}")
    parts = [
        struct.pack(
            "<4sB B 3I",
            b"RBDC",
            VERSION,
            _DECODER_CODES[decoder.kind],
            decoder.dim,
            decoder.num_classes,
            len(meta),
        )
    ]
    parts.extend(struct.pack("<I", m) for m in meta)
    names = sorted(decoder.params)
    parts.append(struct.pack("<I", len(names)))
    for name in names:
        raw = name.encode("utf-8")
        tensor = decoder.params[name]
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<B", tensor.ndim))
        parts.append(struct.pack(f"<{tensor.ndim}I", *tensor.shape))
        parts.append(np.ascontiguousarray(tensor, dtype=_F32).tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


def load_decoder(path) -> Decoder:
    r = _read(path)
    _check_magic(r, b"RBDC")
    code = r.u8()
    dim, num_classes, n_meta = r.u32(3)
    meta = [r.u32() for _ in range(n_meta)]
    kinds = {v: k for k, v in _DECODER_CODES.items()}
    if code not in kinds:
        raise FormatError(f"{r.path}: unknown decoder code {code}")
    kind = kinds[code]
    try:
        if kind == "linear":
            decoder: Decoder = LinearDecoder(dim, num_classes)
        elif kind == "mlp":
            decoder = MlpDecoder(dim, num_classes, hidden=meta[0])
        else:
            decoder = TransformerDecoder(dim, num_classes, blocks=meta[0], heads=meta[1])
    except (IndexError, ConfigError) as exc:
        raise FormatError(f"{r.path}: invalid decoder geometry: {exc}") from exc
    n_tensors = r.u32()
    seen = {}
    for _ in range(n_tensors):
        name_len = struct.unpack("<H", r.take(2))[0]
        name = r.take(name_len).decode("utf-8")
        ndim = r.u8()
        shape = tuple(r.u32(ndim)) if ndim > 1 else ((r.u32(),) if ndim == 1 else ())
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        seen[name] = r.array(_F32, count).reshape(shape).astype(np.float64)
    r.done()
    if set(seen) != set(decoder.params):
        missing = set(decoder.params) ^ set(seen)
        raise FormatError(f"{r.path}: parameter names do not match: {sorted(missing)}")
    for name, tensor in seen.items():
        if tensor.shape != decoder.params[name].shape:
            raise FormatError(
                f"{r.path}: {name} has shape {tensor.shape}, expected {decoder.params[name].shape}"
            )
        decoder.params[name] = tensor
    return decoder


# retrieval indexes ---------------------------------------------------------

def save_index(index: RetrievalIndex, path) -> None:
    n, d = index.matrix.shape
    head = struct.pack("<4sB B 2I", b"RBRI", VERSION, int(index.normalize), n, d)
    with open(path, "wb") as fh:
        fh.write(head)
        fh.write(np.ascontiguousarray(index.image_ids, dtype=_I64).tobytes())
        fh.write(np.ascontiguousarray(index.region_ids, dtype=_I64).tobytes())
        fh.write(np.ascontiguousarray(index.matrix, dtype=_F32).tobytes())


def load_index(path) -> RetrievalIndex:
    r = _read(path)
    _check_magic(r, b"RBRI")
    normalize = bool(r.u8())
    n, d = r.u32(2)
    image_ids = r.array(_I64, n).astype(np.int64)
    region_ids = r.array(_I64, n).astype(np.int64)
    matrix = r.array(_F32, n * d).reshape(n, d).astype(np.float32)
    r.done()
    if not np.isfinite(matrix).all():
        raise FormatError(f"{r.path}: index matrix contains NaN or Inf")
    return RetrievalIndex(
        matrix=matrix, image_ids=image_ids, region_ids=region_ids, normalize=normalize
    )


# PPM images ----------------------------------------------------------------

def load_ppm(path) -> np.ndarray:
    """Binary PPM (P6, maxval 255) to (h, w, 3) uint8."""
    with open(path, "rb") as fh:
        data = fh.read()
    if not data.startswith(b"P6"):
        raise FormatError(f"{path}: not a binary PPM (P6) file")
    fields = []
    pos = 2
    while len(fields) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise TruncatedFileError(f"{path}: header ends at offset {pos}")
        fields.append(data[start:pos])
    try:
        w, h, maxval = (int(f) for f in fields)
    except ValueError as exc:
        raise FormatError(f"{path}: malformed PPM header: {exc}") from exc
    if maxval != 255:
        raise FormatError(f"{path}: only maxval 255 supported, got {maxval}")
    pos += 1  # single whitespace byte after maxval
    need = h * w * 3
    raw = data[pos : pos + need]
    if len(raw) < need:
        raise TruncatedFileError(
            f"{path}: needed {need} pixel bytes at offset {pos}, file ends at {len(data)}"
        )
    return np.frombuffer(raw, dtype=np.uint8).reshape(h, w, 3).copy()


def save_ppm(rgb: np.ndarray, path) -> None:
    rgb = np.ascontiguousarray(rgb, dtype=np.uint8)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ConfigError(f"expected (h, w, 3) uint8, got {rgb.shape}")
    h, w = rgb.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(rgb.tobytes())
