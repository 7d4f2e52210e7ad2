"""Command-line pipeline over the library: segment, pool, label, train,
score, index, query, assemble tokens, generate fixtures, and benchmark.

Reports are JSON with a schema_version field, written to --report or
stdout. Exit codes: 0 success, 1 data or file errors, 2 usage errors.
Flags can be preloaded from a TOML file via --config; explicit flags win.
--threads (or the RBR_THREADS env var) sizes the worker pool for
per-image or per-query stages; outputs are independent of the pool size.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # 3.10
    import tomli as tomllib

import numpy as np

from . import formats
from .core import (
    ConfigError,
    IGNORE_LABEL,
    ImageDims,
    LabelMap,
    MaskSet,
    RegionRepError,
    RegionVector,
)
from .decoders import (
    LabeledGroup,
    LinearDecoder,
    MlpDecoder,
    TrainConfig,
    TransformerDecoder,
    softmax,
    train,
)
from .labeling import derive_region_label
from .multi_image import (
    FrameRegions,
    SceneConfig,
    SceneImage,
    assemble_scene_tokens,
    assemble_video_tokens,
    sample_frames,
)
from .pooling import Interpolation, PoolConfig, Reducer, Resample, encode_image
from .regions import augment_with_slic, coverage_stats
from .retrieval import (
    average_precision,
    build_index,
    mean_average_precision,
    precision_at_k,
    query,
)
from .segmap import PixelPrediction, miou, oracle_eval, predict_pixels
from .slic import RgbImage, SlicConfig, slic_segment_with_costs
from .synth import Scene, gen_retrieval_db, gen_scene

SCHEMA_VERSION = 1
EXIT_DATA = 1


def _emit(report: dict, path: str | None) -> None:
    report = {"schema_version": SCHEMA_VERSION, **report}
    text = json.dumps(report, indent=2, sort_keys=False)
    if path:
        Path(path).write_text(text + "\n", encoding="utf-8")
    else:
        print(text)


def _thread_count(args) -> int:
    n = getattr(args, "threads", None)
    if n is None:
        n = int(os.environ.get("RBR_THREADS", "1"))
    if n < 1:
        raise ConfigError(f"--threads must be >= 1, got {n}")
    return n


def _pmap(fn, items, threads: int) -> list:
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _iou_report_dict(rep) -> dict:
    return {
        "miou": rep.miou,
        "per_class_iou": {str(c): v for c, v in zip(rep.class_ids, rep.ious)},
        "confusion": rep.confusion.tolist(),
        "void_pixels": int(rep.confusion[:, -1].sum()),
        "scored_pixels": int(rep.confusion.sum()),
    }


# region label files ---------------------------------------------------------

def save_region_labels(labels: list, skipped: list[int], threshold: float, path) -> None:
    doc = {
        "schema_version": SCHEMA_VERSION,
        "threshold": threshold,
        "labels": [
            {"region_id": l.region_id, "label": l.label, "weight": l.weight}
            for l in labels
        ],
        "skipped": skipped,
    }
    Path(path).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


def load_region_labels(path) -> dict[int, tuple[int, float]]:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        return {
            int(e["region_id"]): (int(e["label"]), float(e["weight"]))
            for e in doc["labels"]
        }
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise formats.FormatError(f"{path}: not a region-label file: {exc}") from exc


# subcommands -----------------------------------------------------------------

def cmd_slic(args) -> int:
    rgb = formats.load_ppm(args.image)
    img = RgbImage(ImageDims(rgb.shape[0], rgb.shape[1]), rgb)
    cfg = SlicConfig(
        num_components=args.k,
        compactness=args.compactness,
        max_iters=args.iters,
    )
    t0 = time.perf_counter()
    masks, costs = slic_segment_with_costs(img, cfg)
    seconds = time.perf_counter() - t0
    formats.save_mask_set(masks, args.out)
    _emit(
        {
            "command": "slic",
            "image": str(args.image),
            "out": str(args.out),
            "num_regions": len(masks.masks),
            "cost_per_iteration": costs,
            "seconds": seconds,
        },
        args.report,
    )
    return 0


def cmd_augment(args) -> int:
    sam = formats.load_mask_set(args.sam)
    slic = formats.load_mask_set(args.slic)
    before = coverage_stats(sam)
    out = augment_with_slic(sam, slic, min_uncovered=args.min_uncovered)
    after = coverage_stats(out)
    formats.save_mask_set(out, args.out)
    _emit(
        {
            "command": "augment",
            "out": str(args.out),
            "added_ids": sorted(set(out.ids) - set(sam.ids)),
            "coverage_before": before.covered_fraction,
            "coverage_after": after.covered_fraction,
            "regions_before": before.region_count,
            "regions_after": after.region_count,
        },
        args.report,
    )
    return 0


def _pool_config(args) -> PoolConfig:
    return PoolConfig(
        resample=Resample(args.resample),
        reducer=Reducer(args.reducer),
        interpolation=Interpolation(args.interpolation),
        add_grid_posemb=args.posemb,
    )


def cmd_pool(args) -> int:
    grid = formats.load_feature_grid(args.features)
    masks = formats.load_mask_set(args.masks)
    result = encode_image(grid, masks, _pool_config(args), image_id=args.image_id)
    if not result.vectors:
        raise ConfigError(
            "every mask vanished under downsampling; nothing to write "
            f"(vanished ids: {list(result.vanished)})"
        )
    formats.save_region_vectors(list(result.vectors), args.out)
    _emit(
        {
            "command": "pool",
            "out": str(args.out),
            "num_vectors": len(result.vectors),
            "dim": result.vectors[0].dim,
            "vanished_ids": list(result.vanished),
        },
        args.report,
    )
    return 0


def cmd_prep_labels(args) -> int:
    masks = formats.load_mask_set(args.masks)
    gt = formats.load_label_map(args.labels)
    labeled, skipped = [], []
    for mid, mask in zip(masks.ids, masks.masks):
        lab = derive_region_label(mask, gt, threshold=args.threshold, region_id=mid)
        if lab is None:
            skipped.append(mid)
        else:
            labeled.append(lab)
    save_region_labels(labeled, skipped, args.threshold, args.out)
    _emit(
        {
            "command": "prep-labels",
            "out": str(args.out),
            "labeled": len(labeled),
            "skipped": skipped,
        },
        args.report,
    )
    return 0


def _load_training_pairs(vector_paths, label_paths):
    if len(vector_paths) != len(label_paths):
        raise ConfigError(
            f"{len(vector_paths)} --vectors files but {len(label_paths)} --labels files"
        )
    pairs = []
    for vp, lp in zip(vector_paths, label_paths):
        vectors = formats.load_region_vectors(vp)
        table = load_region_labels(lp)
        matched = [(v, *table[v.region_id]) for v in vectors if v.region_id in table]
        if matched:
            pairs.append(matched)
    if not pairs:
        raise ConfigError("no labeled regions found across the given files")
    return pairs


def _groups_from_pairs(pairs, per_image: bool) -> list[LabeledGroup]:
    # transformer decoders see one group per image; the others train on
    # singleton groups so batching is independent of image boundaries
    groups = []
    for matched in pairs:
        stacks = [matched] if per_image else [[row] for row in matched]
        for rows in stacks:
            groups.append(
                LabeledGroup(
                    np.stack([v.values for v, _, _ in rows]).astype(np.float64),
                    np.array([lab for _, lab, _ in rows], dtype=np.int64),
                    np.array([w for _, _, w in rows], dtype=np.float64),
                )
            )
    return groups


def cmd_train_seg(args) -> int:
    pairs = _load_training_pairs(args.vectors, args.labels)
    dim = pairs[0][0][0].dim
    num_classes = args.num_classes
    if num_classes is None:
        num_classes = 1 + max(lab for matched in pairs for _, lab, _ in matched)
    per_image = args.decoder == "xf"
    groups = _groups_from_pairs(pairs, per_image)
    val_groups = None
    if args.val_vectors:
        val_pairs = _load_training_pairs(args.val_vectors, args.val_labels or [])
        val_groups = _groups_from_pairs(val_pairs, per_image)
    if args.decoder == "linear":
        decoder = LinearDecoder(dim, num_classes, seed=args.seed)
    elif args.decoder == "mlp":
        decoder = MlpDecoder(dim, num_classes, hidden=args.hidden, seed=args.seed)
    else:
        decoder = TransformerDecoder(
            dim, num_classes, blocks=args.blocks, heads=args.heads, seed=args.seed
        )
    cfg = TrainConfig(
        lr=args.lr,
        batch=args.batch,
        epochs=args.epochs,
        optimizer=args.optimizer,
        weight_decay=args.weight_decay,
        patience=args.patience,
        seed=args.seed,
    )
    result = train(decoder, groups, cfg, val_groups)
    formats.save_decoder(decoder, args.out)
    _emit(
        {
            "command": "train-seg",
            "out": str(args.out),
            "decoder": args.decoder,
            "dim": dim,
            "num_classes": num_classes,
            "groups": len(groups),
            "train_losses": result.train_losses,
            "val_losses": result.val_losses,
            "stopped_epoch": result.stopped_epoch,
            "best_epoch": result.best_epoch,
        },
        args.report,
    )
    return 0


def _decoder_predict_probs(decoder, masks: MaskSet, vectors) -> list:
    by_id = {}
    order = [v for v in vectors]
    if order:
        feats = np.stack([v.values for v in order]).astype(np.float64)
        probs = softmax(decoder.forward(feats))
        by_id = {v.region_id: probs[i] for i, v in enumerate(order)}
    return [by_id.get(mid) for mid in masks.ids]


def cmd_eval_seg(args) -> int:
    gt = formats.load_label_map(args.gt)
    if args.pred:
        if args.decoder or args.vectors or args.masks:
            raise ConfigError("--pred excludes --decoder/--vectors/--masks")
        pm = formats.load_label_map(args.pred)
        pred = PixelPrediction(
            dims=pm.dims,
            labels=pm.labels.astype(np.int64),
            void=pm.labels == IGNORE_LABEL,
        )
    else:
        if not (args.decoder and args.vectors and args.masks):
            raise ConfigError("need either --pred or all of --decoder/--vectors/--masks")
        decoder = formats.load_decoder(args.decoder)
        masks = formats.load_mask_set(args.masks)
        vectors = formats.load_region_vectors(args.vectors)
        probs = _decoder_predict_probs(decoder, masks, vectors)
        pred = predict_pixels(masks, probs, num_classes=decoder.num_classes)
    rep = miou(pred, gt)
    _emit({"command": "eval-seg", **_iou_report_dict(rep)}, args.report)
    return 0


def cmd_oracle_eval(args) -> int:
    masks = formats.load_mask_set(args.masks)
    gt = formats.load_label_map(args.gt)
    rep = oracle_eval(masks, gt)
    _emit({"command": "oracle-eval", **_iou_report_dict(rep)}, args.report)
    return 0


def cmd_index(args) -> int:
    vectors = formats.load_region_vectors(args.vectors)
    index = build_index(vectors, normalize=args.normalize)
    formats.save_index(index, args.out)
    _emit(
        {
            "command": "index",
            "out": str(args.out),
            "rows": len(index),
            "dim": index.dim,
            "normalize": index.normalize,
        },
        args.report,
    )
    return 0


def cmd_query(args) -> int:
    index = formats.load_index(args.index)
    qs = formats.load_region_vectors(args.query_vector)
    if not 0 <= args.query_index < len(qs):
        raise ConfigError(f"--query-index {args.query_index} out of range for {len(qs)} records")
    ranked = query(index, qs[args.query_index], top_k=args.topk)
    _emit(
        {
            "command": "query",
            "results": [
                {
                    "image_id": e.image_id,
                    "score": e.score,
                    "best_region_id": e.best_region_id,
                }
                for e in ranked
            ],
            "universe_size": len(ranked.universe),
        },
        args.report,
    )
    return 0


def cmd_eval_retrieval(args) -> int:
    threads = _thread_count(args)
    if args.synth_seed is not None:
        if args.index or args.queries:
            raise ConfigError("--synth-seed excludes --index/--queries")
        db = gen_retrieval_db(
            seed=args.synth_seed,
            num_images=args.num_images,
            num_classes=args.num_classes,
            queries_per_class=args.queries_per_class,
            noise_std=args.noise_std,
            distractor_only=args.distractor_only,
        )
        index = build_index(list(db.vectors), normalize=args.normalize)
        flat = [(c, q) for c, qs in db.queries.items() for q in qs]
        relevant = db.relevant
        num_images = db.num_images
    else:
        if not (args.index and args.queries and args.relevance):
            raise ConfigError("need --synth-seed or all of --index/--queries/--relevance")
        index = formats.load_index(args.index)
        queries_list = formats.load_region_vectors(args.queries)
        try:
            doc = json.loads(Path(args.relevance).read_text(encoding="utf-8"))
            rel_lists = [frozenset(int(i) for i in ids) for ids in doc["relevant"]]
            classes = [int(c) for c in doc.get("classes", range(len(rel_lists)))]
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise formats.FormatError(f"{args.relevance}: bad relevance file: {exc}") from exc
        if len(rel_lists) != len(queries_list) or len(classes) != len(queries_list):
            raise ConfigError("relevance entries must align with query records")
        flat = list(zip(classes, queries_list))
        relevant = {c: r for (c, _), r in zip(flat, rel_lists)}
        num_images = len(frozenset(int(i) for i in index.image_ids))

    def one(item):
        c, q = item
        ranked = query(index, q, top_k=num_images)
        return (
            c,
            average_precision(ranked, relevant[c]),
            precision_at_k(ranked, relevant[c], k=args.pk),
        )

    rows = _pmap(one, flat, threads)
    by_class: dict[int, list[float]] = {}
    pks = []
    for c, ap, pk in rows:
        by_class.setdefault(c, []).append(ap)
        pks.append(pk)
    _emit(
        {
            "command": "eval-retrieval",
            "map": mean_average_precision(by_class),
            "p_at_k": float(np.mean(pks)),
            "k": args.pk,
            "per_class_ap": {str(c): float(np.mean(v)) for c, v in sorted(by_class.items())},
            "num_queries": len(rows),
        },
        args.report,
    )
    return 0


def _resolve(base: Path, rel: str) -> Path:
    p = Path(rel)
    return p if p.is_absolute() else base / p


def cmd_assemble_scene(args) -> int:
    base = Path(args.manifest).parent
    try:
        doc = json.loads(Path(args.manifest).read_text(encoding="utf-8"))
        entries = doc["images"]
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise formats.FormatError(f"{args.manifest}: bad scene manifest: {exc}") from exc
    images = []
    for e in entries:
        points = None
        if "points" in e:
            points = formats.load_point_map(_resolve(base, e["points"]))
        images.append(
            SceneImage(
                image_id=int(e["image_id"]),
                vectors=tuple(formats.load_region_vectors(_resolve(base, e["vectors"]))),
                masks=formats.load_mask_set(_resolve(base, e["masks"])),
                points=points,
            )
        )
    cfg = SceneConfig(emb_2d=args.emb2d, emb_3d=args.emb3d, merge=args.merge)
    batch = assemble_scene_tokens(images, cfg, pad_to=args.pad_to)
    np.savez(
        args.out,
        tokens=batch.tokens,
        attention_mask=batch.attention_mask,
        provenance=np.array(batch.provenance, dtype=np.int64),
    )
    _emit(
        {
            "command": "assemble-scene",
            "out": str(args.out),
            "tokens": int(batch.tokens.shape[0]),
            "token_dim": int(batch.tokens.shape[1]),
            "real_tokens": int(batch.attention_mask.sum()),
        },
        args.report,
    )
    return 0


def cmd_assemble_video(args) -> int:
    base = Path(args.manifest).parent
    try:
        doc = json.loads(Path(args.manifest).read_text(encoding="utf-8"))
        entries = doc["frames"]
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise formats.FormatError(f"{args.manifest}: bad video manifest: {exc}") from exc
    if not entries:
        raise ConfigError("video manifest lists no frames")
    chosen = sample_frames(len(entries), n=args.num_frames)
    frames = []
    for slot, src in enumerate(chosen):
        e = entries[src]
        vectors = tuple(formats.load_region_vectors(_resolve(base, e["vectors"])))
        masks = formats.load_mask_set(_resolve(base, e["masks"]))
        px = {mid: m.pixel_count for mid, m in zip(masks.ids, masks.masks)}
        try:
            counts = tuple(px[v.region_id] for v in vectors)
        except KeyError as exc:
            raise ConfigError(f"frame {src}: vector region {exc} missing from masks") from exc
        frames.append(FrameRegions(frame_index=slot, vectors=vectors, pixel_counts=counts))
    batch, dropped = assemble_video_tokens(frames, pad_to=args.pad_to)
    np.savez(
        args.out,
        tokens=batch.tokens,
        attention_mask=batch.attention_mask,
        provenance=np.array(batch.provenance, dtype=np.int64),
    )
    _emit(
        {
            "command": "assemble-video",
            "out": str(args.out),
            "source_frames": chosen,
            "tokens": int(batch.tokens.shape[0]),
            "real_tokens": int(batch.attention_mask.sum()),
            "dropped": [list(d) for d in dropped],
        },
        args.report,
    )
    return 0


def _scene_paths(out_dir: Path, i: int) -> dict[str, Path]:
    return {
        "image": out_dir / f"image_{i:03d}.ppm",
        "labels": out_dir / f"labels_{i:03d}.rblm",
        "masks": out_dir / f"masks_{i:03d}.json",
        "grid": out_dir / f"grid_{i:03d}.rbrf",
    }


def cmd_synth(args) -> int:
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for i in range(args.num_images):
        scene = gen_scene(
            args.seed + i,
            dims=ImageDims(args.height, args.width),
            num_segments=args.num_segments,
            num_classes=args.num_classes,
            patch=args.patch,
            feature_scale=args.feature_scale,
            noise_std=args.noise_std,
        )
        paths = _scene_paths(out_dir, i)
        formats.save_ppm(scene.image.pixels, paths["image"])
        formats.save_label_map(scene.labels, paths["labels"])
        formats.save_mask_set(scene.masks, paths["masks"])
        formats.save_feature_grid(scene.grid, paths["grid"])
        entries.append({k: p.name for k, p in paths.items()} | {"seed": args.seed + i})
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "num_classes": args.num_classes,
        "images": entries,
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    _emit(
        {
            "command": "synth",
            "out_dir": str(out_dir),
            "num_images": args.num_images,
            "num_classes": args.num_classes,
        },
        args.report,
    )
    return 0


# bench -----------------------------------------------------------------------

def _sparse_dot_mask(dims: ImageDims) -> np.ndarray:
    # isolated pixels: under any patch >= 2 no grid cell reaches half coverage
    bitmap = np.zeros((dims.height, dims.width), dtype=bool)
    step = 4
    for i in range(0, min(dims.height, dims.width), step):
        bitmap[i, i] = True
    return bitmap


def _bench_train_eval(train_scenes, val_scenes, cfg: PoolConfig, num_classes: int,
                      mask_of, timers: dict) -> tuple[float, int]:
    """Pool with cfg, train a linear decoder, return (val mIoU, vanished count)."""
    from .core import rle_encode  # local import keeps top tidy

    vanished = 0
    groups = []
    t0 = time.perf_counter()
    encoded = []
    for sc in train_scenes + val_scenes:
        masks = mask_of(sc)
        enc = encode_image(sc.grid, masks, cfg)
        vanished += len(enc.vanished)
        encoded.append((sc, masks, enc))
    timers["pool"] = timers.get("pool", 0.0) + time.perf_counter() - t0
    t0 = time.perf_counter()
    for sc, masks, enc in encoded[: len(train_scenes)]:
        by_id = {mid: m for mid, m in zip(masks.ids, masks.masks)}
        for v in enc.vectors:
            lab = derive_region_label(by_id[v.region_id], sc.labels, 0.5, v.region_id)
            if lab is not None:
                groups.append(
                    LabeledGroup(
                        v.values[None, :].astype(np.float64),
                        np.array([lab.label]),
                        np.array([float(lab.weight)]),
                    )
                )
    dim = encoded[0][2].vectors[0].dim
    decoder = LinearDecoder(dim, num_classes, seed=0)
    train(decoder, groups, TrainConfig(lr=5e-4, batch=32, epochs=20, seed=0))
    timers["train"] = timers.get("train", 0.0) + time.perf_counter() - t0
    t0 = time.perf_counter()
    mious = []
    for sc, masks, enc in encoded[len(train_scenes):]:
        probs = _decoder_predict_probs(decoder, masks, enc.vectors)
        pred = predict_pixels(masks, probs, num_classes=num_classes)
        mious.append(miou(pred, sc.labels).miou)
    timers["eval"] = timers.get("eval", 0.0) + time.perf_counter() - t0
    return float(np.mean(mious)), vanished


def cmd_bench(args) -> int:
    from .core import rle_encode
    from .core import MaskSource

    threads = _thread_count(args)
    num_classes = 6
    timers: dict[str, float] = {}
    t0 = time.perf_counter()
    train_scenes = [gen_scene(args.seed + i, num_classes=num_classes) for i in range(args.images)]
    val_scenes = [gen_scene(args.seed + 100 + i, num_classes=num_classes) for i in range(max(2, args.images // 2))]
    timers["generate"] = time.perf_counter() - t0
    all_scenes = train_scenes + val_scenes

    # Table 1 analog: mask sources
    def slic_of(sc: Scene) -> MaskSet:
        masks, _ = slic_segment_with_costs(sc.image, SlicConfig(num_components=24))
        return masks

    t0 = time.perf_counter()
    slic_sets = _pmap(slic_of, all_scenes, threads)
    timers["segment"] = time.perf_counter() - t0
    slic_by_scene = dict(zip((id(s) for s in all_scenes), slic_sets))

    def dropped_plus_slic(sc: Scene) -> MaskSet:
        # drop the background mask: a large uncovered hole for augmentation;
        # the gate is small because 64x64 superpixels run ~170 px each
        keep = [(mid, m) for mid, m in zip(sc.masks.ids, sc.masks.masks) if mid != 0]
        partial = MaskSet(sc.masks.dims, [m for _, m in keep], [mid for mid, _ in keep])
        return augment_with_slic(partial, slic_by_scene[id(sc)], min_uncovered=100)

    segment_per_image = timers["segment"] / len(all_scenes)
    rows = []
    pool_cfg = PoolConfig()
    for name, mask_of, base_seconds in (
        ("aligned", lambda sc: sc.masks, 0.0),
        ("slic", lambda sc: slic_by_scene[id(sc)], segment_per_image),
        ("aligned-dropped+slic", dropped_plus_slic, segment_per_image),
    ):
        t0 = time.perf_counter()
        per_image = [mask_of(sc) for sc in all_scenes]
        seconds = base_seconds + (time.perf_counter() - t0) / len(all_scenes)
        coverage = float(np.mean([coverage_stats(m).covered_fraction for m in per_image]))
        regions = float(np.mean([len(m.masks) for m in per_image]))
        oracle = float(np.mean([oracle_eval(m, sc.labels).miou for m, sc in zip(per_image, all_scenes)]))
        actual, _ = _bench_train_eval(train_scenes, val_scenes, pool_cfg, num_classes, mask_of, timers)
        rows.append(
            {
                "name": name,
                "seconds_per_image": seconds,
                "regions_per_image": regions,
                "coverage_fraction": coverage,
                "oracle_miou": oracle,
                "actual_miou": actual,
            }
        )

    # Table 3 analog: pooling ablation cells on masks with one tiny region
    def with_dots(sc: Scene) -> MaskSet:
        dots = rle_encode(_sparse_dot_mask(sc.masks.dims), source=MaskSource.OTHER)
        return MaskSet(
            sc.masks.dims,
            list(sc.masks.masks) + [dots],
            list(sc.masks.ids) + [max(sc.masks.ids) + 1],
        )

    cells = []
    for resample in (Resample.UPSAMPLE_FEATURES, Resample.DOWNSAMPLE_MASKS):
        for reducer in (Reducer.AVERAGE, Reducer.MAX):
            cfg = PoolConfig(resample=resample, reducer=reducer)
            actual, vanished = _bench_train_eval(
                train_scenes, val_scenes, cfg, num_classes, with_dots, timers
            )
            cells.append(
                {
                    "resample": resample.value,
                    "reducer": reducer.value,
                    "actual_miou": actual,
                    "vanished_masks": vanished,
                }
            )

    _emit(
        {
            "command": "bench",
            "seed": args.seed,
            "images": len(all_scenes),
            "table1": {"rows": rows},
            "table3": {"cells": cells},
            "stage_seconds": {k: round(v, 6) for k, v in timers.items()},
        },
        args.report,
    )
    return 0


# parser ----------------------------------------------------------------------

def _add_report(p):
    p.add_argument("--report", help="write the JSON report here instead of stdout")
    p.add_argument("--config", help="TOML file with default flag values")


def build_parser() -> tuple[argparse.ArgumentParser, dict[str, argparse.ArgumentParser]]:
    parser = argparse.ArgumentParser(
        prog="regionrep",
        description="Region-based image representations: segment, pool, train, score, retrieve.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    subs: dict[str, argparse.ArgumentParser] = {}

    def add(name, fn, **kw):
        p = sub.add_parser(name, **kw)
        p.set_defaults(fn=fn)
        _add_report(p)
        subs[name] = p
        return p

    p = add("slic", cmd_slic, help="superpixel partition of a PPM image")
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--k", type=int, default=50)
    p.add_argument("--compactness", type=float, default=8.0)
    p.add_argument("--iters", type=int, default=10)

    p = add("augment", cmd_augment, help="fill coverage gaps with superpixel pieces")
    p.add_argument("--sam", required=True, help="mask set to augment")
    p.add_argument("--slic", required=True, help="partition mask set")
    p.add_argument("--out", required=True)
    p.add_argument("--min-uncovered", type=int, default=300)

    p = add("pool", cmd_pool, help="pool a feature grid into region vectors")
    p.add_argument("--features", required=True)
    p.add_argument("--masks", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--resample", choices=[r.value for r in Resample], default=Resample.UPSAMPLE_FEATURES.value)
    p.add_argument("--reducer", choices=[r.value for r in Reducer], default=Reducer.AVERAGE.value)
    p.add_argument("--interpolation", choices=[i.value for i in Interpolation], default=Interpolation.BILINEAR.value)
    p.add_argument("--posemb", action="store_true", help="add grid positional embeddings")
    p.add_argument("--image-id", type=int, default=0)

    p = add("prep-labels", cmd_prep_labels, help="derive region labels from a GT label map")
    p.add_argument("--masks", required=True)
    p.add_argument("--labels", required=True, help="ground-truth label map (RBLM)")
    p.add_argument("--out", required=True)
    p.add_argument("--threshold", type=float, default=0.5)

    p = add("train-seg", cmd_train_seg, help="train a region decoder")
    p.add_argument("--vectors", nargs="+", required=True)
    p.add_argument("--labels", nargs="+", required=True, help="region-label JSON files, one per vectors file")
    p.add_argument("--out", required=True)
    p.add_argument("--decoder", choices=["linear", "mlp", "xf"], default="linear")
    p.add_argument("--lr", type=float, default=5e-4)
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--optimizer", choices=["sgd", "adamw"], default="sgd")
    p.add_argument("--weight-decay", type=float, default=0.0)
    p.add_argument("--patience", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--num-classes", type=int)
    p.add_argument("--hidden", type=int, default=1000)
    p.add_argument("--blocks", type=int, default=1)
    p.add_argument("--heads", type=int, default=8)
    p.add_argument("--val-vectors", nargs="+")
    p.add_argument("--val-labels", nargs="+")

    p = add("eval-seg", cmd_eval_seg, help="score predictions against a GT label map")
    p.add_argument("--gt", required=True)
    p.add_argument("--pred", help="predicted label map (RBLM, ignore value = void)")
    p.add_argument("--decoder", help="decoder checkpoint (with --vectors/--masks)")
    p.add_argument("--vectors")
    p.add_argument("--masks")

    p = add("oracle-eval", cmd_oracle_eval, help="upper-bound mIoU for a mask set")
    p.add_argument("--masks", required=True)
    p.add_argument("--gt", required=True)

    p = add("index", cmd_index, help="build an exact-search index from region vectors")
    p.add_argument("--vectors", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--normalize", action="store_true")

    p = add("query", cmd_query, help="rank images for one query vector")
    p.add_argument("--index", required=True)
    p.add_argument("--query-vector", required=True, help="RBRV file holding the query")
    p.add_argument("--query-index", type=int, default=0, help="record to use from the file")
    p.add_argument("--topk", type=int, default=50)

    p = add("eval-retrieval", cmd_eval_retrieval, help="mAP and precision@k evaluation")
    p.add_argument("--synth-seed", type=int, help="evaluate on a generated database")
    p.add_argument("--num-images", type=int, default=40)
    p.add_argument("--num-classes", type=int, default=5)
    p.add_argument("--queries-per-class", type=int, default=3)
    p.add_argument("--noise-std", type=float, default=0.0)
    p.add_argument("--distractor-only", action="store_true")
    p.add_argument("--normalize", action="store_true")
    p.add_argument("--index", help="saved index (with --queries/--relevance)")
    p.add_argument("--queries", help="RBRV file of query vectors")
    p.add_argument("--relevance", help="JSON {relevant: [[image ids] per query], classes: [...]}")
    p.add_argument("--pk", type=int, default=50, help="k for precision@k")
    p.add_argument("--threads", type=int)

    p = add("assemble-scene", cmd_assemble_scene, help="merge multi-view region tokens")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="output .npz (tokens, attention_mask, provenance)")
    p.add_argument("--emb2d", type=int, default=0)
    p.add_argument("--emb3d", type=int, default=0)
    p.add_argument("--merge", choices=["concat", "add"], default="concat")
    p.add_argument("--pad-to", type=int)

    p = add("assemble-video", cmd_assemble_video, help="sample frames and budget tokens")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--num-frames", type=int, default=8)
    p.add_argument("--pad-to", type=int, default=400)

    p = add("synth", cmd_synth, help="write synthetic fixture scenes")
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--num-images", type=int, default=3)
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--num-segments", type=int, default=10)
    p.add_argument("--num-classes", type=int, default=6)
    p.add_argument("--patch", type=int, default=2)
    p.add_argument("--feature-scale", type=float, default=40.0)
    p.add_argument("--noise-std", type=float, default=1.0)

    p = add("bench", cmd_bench, help="pipeline benchmark table on synthetic fixtures")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--images", type=int, default=6)
    p.add_argument("--threads", type=int)

    return parser, subs


def _apply_config(parser, subs, argv) -> None:
    # a first parse finds --config; its values become subparser defaults and
    # the caller re-parses so explicit flags still win
    try:
        probe, _ = parser.parse_known_args(argv)
    except SystemExit:
        return
    path = getattr(probe, "config", None)
    if not path:
        return
    with open(path, "rb") as fh:
        try:
            doc = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            parser.error(f"--config {path}: {exc}")
    command = probe.command
    table = {k: v for k, v in doc.items() if not isinstance(v, dict)}
    table.update(doc.get(command, {}))
    sp = subs[command]
    known = {a.dest for a in sp._actions}
    unknown = sorted(set(table) - known)
    if unknown:
        parser.error(f"--config {path}: unknown keys for {command}: {', '.join(unknown)}")
    sp.set_defaults(**table)


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser, subs = build_parser()
    _apply_config(parser, subs, argv)
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except RegionRepError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
