"""Dataset tooling for semi-supervised stomatal instance segmentation."""
from .coco import (
    Annotation,
    Category,
    Dataset,
    ImageRecord,
    Prediction,
    ValidationReport,
    parse_dataset,
    parse_predictions,
    serialize_dataset,
    validate,
)
from .estimators import FrameStitcher, InstanceEvaluator, PatchTiler, PseudoLabeler, SemanticEvaluator
from .evaluator import (
    APResult,
    ConfusionMatrix,
    accumulate_confusion,
    build_semantic_map,
    evaluate_instances,
    miou_macc,
)
from .maskgeom import PolygonSet, Rect, RLEMask
from .pseudo import ThresholdPolicy, build_pseudo_dataset, filter_predictions, merge_datasets
from .stats import class_summary, parse_sample_meta, split_dataset
from .stitcher import dedup, reproject_to_frame
from .tiler import EmptyPatchPolicy, PatchRecord, TileGrid, assign_instances, compute_grid, tile_dataset

__version__ = "0.1.0"

__all__ = [
    "Annotation",
    "Category",
    "Dataset",
    "ImageRecord",
    "Prediction",
    "ValidationReport",
    "parse_dataset",
    "parse_predictions",
    "serialize_dataset",
    "validate",
    "FrameStitcher",
    "InstanceEvaluator",
    "PatchTiler",
    "PseudoLabeler",
    "SemanticEvaluator",
    "APResult",
    "ConfusionMatrix",
    "accumulate_confusion",
    "build_semantic_map",
    "evaluate_instances",
    "miou_macc",
    "PolygonSet",
    "Rect",
    "RLEMask",
    "ThresholdPolicy",
    "build_pseudo_dataset",
    "filter_predictions",
    "merge_datasets",
    "class_summary",
    "parse_sample_meta",
    "split_dataset",
    "dedup",
    "reproject_to_frame",
    "EmptyPatchPolicy",
    "PatchRecord",
    "TileGrid",
    "assign_instances",
    "compute_grid",
    "tile_dataset",
]
