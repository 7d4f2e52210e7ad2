"""Region-based image representations.

A (feature grid, mask set) pair becomes one pooled vector per region.
The modules cover the full pipeline around that step: superpixel
segmentation, coverage augmentation, region labeling, trainable decoders
with hand-derived gradients, segmentation scoring, exact retrieval,
multi-view and video token assembly, binary file formats, synthetic
fixtures, and a command-line front end.
"""
from .core import (
    ConfigError,
    DimsMismatchError,
    EmptyMaskError,
    FeatureGrid,
    IGNORE_LABEL,
    ImageDims,
    LabelMap,
    MaskSet,
    MaskSource,
    NonPartitionError,
    RegionMask,
    RegionRepError,
    RegionVector,
    centroid,
    mask_union_complement,
    overlap_count,
    rle_encode,
)
from .decoders import (
    DivergenceError,
    LabeledGroup,
    LinearDecoder,
    MlpDecoder,
    TrainConfig,
    TrainResult,
    TransformerDecoder,
    gradient_check,
    loss_and_grads,
    train,
)
from .formats import (
    FormatError,
    TruncatedFileError,
    load_decoder,
    load_feature_grid,
    load_index,
    load_label_map,
    load_mask_set,
    load_point_map,
    load_ppm,
    load_region_vectors,
    rle_from_column_major,
    rle_to_column_major,
    save_decoder,
    save_feature_grid,
    save_index,
    save_label_map,
    save_mask_set,
    save_point_map,
    save_ppm,
    save_region_vectors,
)
from .labeling import RegionLabel, derive_region_label, oracle_region_probs
from .multi_image import (
    FrameRegions,
    PAD_PROVENANCE,
    PointMap,
    SceneConfig,
    SceneImage,
    TokenBatch,
    assemble_scene_tokens,
    assemble_video_tokens,
    embed_2d,
    embed_3d,
    sample_frames,
    scene_bbox,
    sincos_embed,
)
from .pooling import (
    EncodeResult,
    Interpolation,
    PoolConfig,
    Reducer,
    Resample,
    downsample_mask,
    encode_image,
    grid_posemb,
    pool_region,
    upsample_features,
)
from .regions import CoverageStats, augment_with_slic, coverage_stats
from .retrieval import (
    RankedEntry,
    RankedResult,
    RetrievalIndex,
    average_precision,
    build_index,
    mean_average_precision,
    precision_at_k,
    query,
    query_from_mask,
)
from .segmap import IouReport, PixelPrediction, miou, oracle_eval, predict_pixels
from .slic import (
    RgbImage,
    SlicConfig,
    rgb_to_lab,
    seed_grid,
    slic_segment,
    slic_segment_with_costs,
)
from .synth import (
    RetrievalDb,
    Scene,
    expected_random_ap,
    feature_dim,
    gen_retrieval_db,
    gen_scene,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "CoverageStats",
    "DimsMismatchError",
    "DivergenceError",
    "EmptyMaskError",
    "EncodeResult",
    "FeatureGrid",
    "FormatError",
    "FrameRegions",
    "IGNORE_LABEL",
    "ImageDims",
    "Interpolation",
    "IouReport",
    "LabelMap",
    "LabeledGroup",
    "LinearDecoder",
    "MaskSet",
    "MaskSource",
    "MlpDecoder",
    "NonPartitionError",
    "PAD_PROVENANCE",
    "PixelPrediction",
    "PointMap",
    "PoolConfig",
    "RankedEntry",
    "RankedResult",
    "Reducer",
    "RegionLabel",
    "RegionMask",
    "RegionRepError",
    "RegionVector",
    "Resample",
    "RetrievalDb",
    "RetrievalIndex",
    "RgbImage",
    "Scene",
    "SceneConfig",
    "SceneImage",
    "SlicConfig",
    "TokenBatch",
    "TrainConfig",
    "TrainResult",
    "TransformerDecoder",
    "TruncatedFileError",
    "assemble_scene_tokens",
    "assemble_video_tokens",
    "augment_with_slic",
    "average_precision",
    "build_index",
    "centroid",
    "coverage_stats",
    "derive_region_label",
    "downsample_mask",
    "embed_2d",
    "embed_3d",
    "encode_image",
    "expected_random_ap",
    "feature_dim",
    "gen_retrieval_db",
    "gen_scene",
    "gradient_check",
    "grid_posemb",
    "load_decoder",
    "load_feature_grid",
    "load_index",
    "load_label_map",
    "load_mask_set",
    "load_point_map",
    "load_ppm",
    "load_region_vectors",
    "loss_and_grads",
    "mask_union_complement",
    "mean_average_precision",
    "miou",
    "oracle_eval",
    "oracle_region_probs",
    "overlap_count",
    "pool_region",
    "precision_at_k",
    "predict_pixels",
    "query",
    "query_from_mask",
    "rgb_to_lab",
    "rle_encode",
    "rle_from_column_major",
    "rle_to_column_major",
    "sample_frames",
    "save_decoder",
    "save_feature_grid",
    "save_index",
    "save_label_map",
    "save_mask_set",
    "save_point_map",
    "save_ppm",
    "save_region_vectors",
    "scene_bbox",
    "seed_grid",
    "sincos_embed",
    "slic_segment",
    "slic_segment_with_costs",
    "train",
    "upsample_features",
    "__version__",
]
