"""segkit: instance-segmentation pipeline toolkit.

Library + CLI for the non-neural parts of a two-model segmentation
pipeline: mask primitives, Soft-NMS, Copy-Paste training augmentation, flip
TTA fusion, per-category ensembling, weight-snapshot averaging and a
COCO-style AP@[0.50:0.95] evaluator.
"""

__version__ = "0.1.0"

from .coco import (
    Annotation,
    Category,
    Dataset,
    Detection,
    ImageInfo,
    parse_dataset,
    parse_results,
    write_dataset,
    write_results,
)
from .cocoeval import EvalParams, EvalReport, average_precision_101, evaluate_map
from .copypaste import AnnotatedImage, AugmentParams, augment_dataset, copy_paste, geometric_augment
from .ensemble import RoutingTable, integrate_by_category
from .errors import ParseError, SegkitError, ValidationError
from .maskops import (
    Box,
    Rle,
    bbox_iou,
    hflip_geometry,
    mask_iou,
    rasterize_polygons,
    rle_decode,
    rle_encode,
)
from .softnms import NmsParams, soft_nms, soft_nms_grouped
from .swa import WeightSnapshot, average_snapshots, cyclic_lr_schedule, load_snapshot, save_snapshot
from .tta import fuse_detections, unflip_detections

__all__ = [
    "Annotation",
    "AnnotatedImage",
    "AugmentParams",
    "Box",
    "Category",
    "Dataset",
    "Detection",
    "EvalParams",
    "EvalReport",
    "ImageInfo",
    "NmsParams",
    "ParseError",
    "Rle",
    "RoutingTable",
    "SegkitError",
    "ValidationError",
    "WeightSnapshot",
    "average_precision_101",
    "average_snapshots",
    "augment_dataset",
    "bbox_iou",
    "copy_paste",
    "cyclic_lr_schedule",
    "evaluate_map",
    "fuse_detections",
    "geometric_augment",
    "hflip_geometry",
    "integrate_by_category",
    "load_snapshot",
    "mask_iou",
    "parse_dataset",
    "parse_results",
    "rasterize_polygons",
    "rle_decode",
    "rle_encode",
    "save_snapshot",
    "soft_nms",
    "soft_nms_grouped",
    "unflip_detections",
    "write_dataset",
    "write_results",
]
