"""COCO-style dataset/results data model and JSON interchange.

Datasets are the usual ``{"images": [...], "annotations": [...],
"categories": [...]}`` documents; results are flat arrays of
``{image_id, category_id, score, segmentation, bbox}`` records with RLE
segmentations. Unknown keys are kept and re-emitted on write. All parsed
objects are plain value holders; nothing here mutates after construction.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import maskops
from .errors import ParseError, ValidationError
from .maskops import Box, Rle

_IMAGE_KEYS = {"id", "width", "height", "file_name"}
_CATEGORY_KEYS = {"id", "name"}
_ANNOTATION_KEYS = {"id", "image_id", "category_id", "segmentation", "area", "bbox", "iscrowd"}
_RESULT_KEYS = {"image_id", "category_id", "score", "segmentation", "bbox"}


@dataclass
class ImageInfo:
    id: int
    width: int
    height: int
    file_name: str = ""
    extra: dict = field(default_factory=dict)


@dataclass
class Category:
    id: int
    name: str
    extra: dict = field(default_factory=dict)


@dataclass
class Annotation:
    """One ground-truth instance. ``segmentation`` is either a polygon list
    or an :class:`Rle`; use :func:`decode_segmentation` for the dense mask."""

    id: int
    image_id: int
    category_id: int
    segmentation: "list[list[float]] | Rle"
    area: float
    bbox: Box
    iscrowd: int = 0
    extra: dict = field(default_factory=dict)


@dataclass
class Detection:
    """One predicted instance, always mask-backed (RLE segmentation)."""

    image_id: int
    category_id: int
    score: float
    segmentation: Rle
    bbox: Box
    extra: dict = field(default_factory=dict)


class Dataset:
    """Validated ground-truth container with id-based lookups."""

    def __init__(
        self,
        images: list[ImageInfo],
        categories: list[Category],
        annotations: list[Annotation],
        extra: dict | None = None,
    ):
        self.images = list(images)
        self.categories = list(categories)
        self.annotations = list(annotations)
        self.extra = dict(extra or {})
        self.images_by_id = {im.id: im for im in self.images}
        self.categories_by_id = {c.id: c for c in self.categories}
        self.category_by_name = {c.name: c for c in self.categories}
        self._validate()

    def _validate(self) -> None:
        if len(self.images_by_id) != len(self.images):
            raise ValidationError("duplicate image ids in dataset")
        if len(self.categories_by_id) != len(self.categories):
            raise ValidationError("duplicate category ids in dataset")
        if len(self.category_by_name) != len(self.categories):
            raise ValidationError("duplicate category names in dataset")
        for im in self.images:
            if im.width <= 0 or im.height <= 0:
                raise ValidationError(f"image {im.id} has non-positive size {im.width}x{im.height}")
        seen_ann = set()
        for ann in self.annotations:
            if ann.id in seen_ann:
                raise ValidationError(f"duplicate annotation id {ann.id}")
            seen_ann.add(ann.id)
            if ann.image_id not in self.images_by_id:
                raise ValidationError(
                    f"annotation {ann.id} references unknown image {ann.image_id}"
                )
            if ann.category_id not in self.categories_by_id:
                raise ValidationError(
                    f"annotation {ann.id} references unknown category {ann.category_id}"
                )
            if ann.area < 0:
                raise ValidationError(f"annotation {ann.id} has negative area")
            im = self.images_by_id[ann.image_id]
            if isinstance(ann.segmentation, Rle):
                if (ann.segmentation.height, ann.segmentation.width) != (im.height, im.width):
                    raise ValidationError(
                        f"annotation {ann.id} rle size "
                        f"{ann.segmentation.height}x{ann.segmentation.width} does not match "
                        f"image {im.id} size {im.height}x{im.width}"
                    )

    def annotations_by_image(self) -> dict[int, list[Annotation]]:
        out: dict[int, list[Annotation]] = {im.id: [] for im in self.images}
        for ann in self.annotations:
            out[ann.image_id].append(ann)
        return out


def decode_segmentation(seg: "list[list[float]] | Rle", height: int, width: int) -> np.ndarray:
    """Dense bool mask for either segmentation representation."""
    if isinstance(seg, Rle):
        return maskops.rle_decode(seg)
    return maskops.rasterize_polygons(seg, height, width)


def annotation_mask(ann: Annotation, image: ImageInfo) -> np.ndarray:
    return decode_segmentation(ann.segmentation, image.height, image.width)


def _parse_segmentation(raw, ann_id) -> "list[list[float]] | Rle":
    if isinstance(raw, dict):
        return maskops.rle_from_json(raw)
    if isinstance(raw, list):
        polys = []
        for poly in raw:
            if not isinstance(poly, list) or len(poly) < 6 or len(poly) % 2 != 0:
                raise ValidationError(
                    f"annotation {ann_id}: polygon must be a flat even-length list "
                    f"of at least 6 coordinates"
                )
            polys.append([float(v) for v in poly])
        return polys
    raise ValidationError(f"annotation {ann_id}: unsupported segmentation {type(raw).__name__}")


def _parse_box(raw, where: str) -> Box:
    if not isinstance(raw, (list, tuple)) or len(raw) != 4:
        raise ValidationError(f"{where}: bbox must be [x, y, w, h], got {raw!r}")
    x, y, w, h = (float(v) for v in raw)
    if w < 0 or h < 0:
        raise ValidationError(f"{where}: bbox has negative extent {raw!r}")
    return Box(x, y, w, h)


def _load_json(path) -> object:
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ParseError(f"cannot read {path}: {e}") from e
    try:
        return json.loads(text)
    except json.JSONDecodeError as e:
        raise ParseError(f"{path}: malformed JSON at byte offset {e.pos}: {e.msg}") from e


def parse_dataset(path) -> Dataset:
    """Read and validate a COCO-style dataset JSON file."""
    doc = _load_json(path)
    if not isinstance(doc, dict):
        raise ParseError(f"{path}: dataset document must be a JSON object")
    for key in ("images", "annotations", "categories"):
        if key not in doc:
            raise ParseError(f"{path}: missing top-level '{key}' array")
        if not isinstance(doc[key], list):
            raise ParseError(f"{path}: top-level '{key}' must be an array")

    images = []
    for rec in doc["images"]:
        missing = _IMAGE_KEYS - {"file_name"} - set(rec)
        if missing:
            raise ValidationError(f"image record missing keys {sorted(missing)}: {rec!r}")
        images.append(
            ImageInfo(
                id=int(rec["id"]),
                width=int(rec["width"]),
                height=int(rec["height"]),
                file_name=str(rec.get("file_name", "")),
                extra={k: v for k, v in rec.items() if k not in _IMAGE_KEYS},
            )
        )

    categories = []
    for rec in doc["categories"]:
        missing = _CATEGORY_KEYS - set(rec)
        if missing:
            raise ValidationError(f"category record missing keys {sorted(missing)}: {rec!r}")
        categories.append(
            Category(
                id=int(rec["id"]),
                name=str(rec["name"]),
                extra={k: v for k, v in rec.items() if k not in _CATEGORY_KEYS},
            )
        )

    annotations = []
    for rec in doc["annotations"]:
        missing = {"id", "image_id", "category_id", "segmentation", "bbox"} - set(rec)
        if missing:
            raise ValidationError(f"annotation record missing keys {sorted(missing)}: {rec!r}")
        ann_id = int(rec["id"])
        seg = _parse_segmentation(rec["segmentation"], ann_id)
        area = float(rec["area"]) if "area" in rec else float(
            seg.area if isinstance(seg, Rle) else 0.0
        )
        annotations.append(
            Annotation(
                id=ann_id,
                image_id=int(rec["image_id"]),
                category_id=int(rec["category_id"]),
                segmentation=seg,
                area=area,
                bbox=_parse_box(rec["bbox"], f"annotation {ann_id}"),
                iscrowd=int(rec.get("iscrowd", 0)),
                extra={k: v for k, v in rec.items() if k not in _ANNOTATION_KEYS},
            )
        )

    return Dataset(images, categories, annotations, extra={
        k: v for k, v in doc.items() if k not in ("images", "annotations", "categories")
    })


def _segmentation_to_json(seg: "list[list[float]] | Rle") -> object:
    if isinstance(seg, Rle):
        return maskops.rle_to_json(seg)
    return seg


def dataset_to_json(ds: Dataset) -> dict:
    doc: dict = dict(ds.extra)
    doc["images"] = [
        {"id": im.id, "width": im.width, "height": im.height, "file_name": im.file_name,
         **im.extra}
        for im in ds.images
    ]
    doc["categories"] = [{"id": c.id, "name": c.name, **c.extra} for c in ds.categories]
    doc["annotations"] = [
        {
            "id": a.id,
            "image_id": a.image_id,
            "category_id": a.category_id,
            "segmentation": _segmentation_to_json(a.segmentation),
            "area": a.area,
            "bbox": a.bbox.to_list(),
            "iscrowd": a.iscrowd,
            **a.extra,
        }
        for a in ds.annotations
    ]
    return doc


def write_dataset(ds: Dataset, path) -> None:
    Path(path).write_text(json.dumps(dataset_to_json(ds)))


def parse_results(path, dataset: Dataset | None = None) -> list[Detection]:
    """Read a detection-results JSON array.

    With a dataset, image/category references and RLE sizes are checked
    against it; without one, only record-local consistency is enforced.
    A record may omit ``bbox``, in which case the tight box of the decoded
    mask is used.
    """
    doc = _load_json(path)
    if not isinstance(doc, list):
        raise ParseError(f"{path}: results document must be a JSON array")
    dets = []
    for i, rec in enumerate(doc):
        if not isinstance(rec, dict):
            raise ValidationError(f"result record {i} is not an object")
        missing = {"image_id", "category_id", "score", "segmentation"} - set(rec)
        if missing:
            raise ValidationError(f"result record {i} missing keys {sorted(missing)}")
        score = float(rec["score"])
        if not 0.0 <= score <= 1.0:
            raise ValidationError(f"result record {i}: score {score} outside [0, 1]")
        if not isinstance(rec["segmentation"], dict):
            raise ValidationError(f"result record {i}: segmentation must be an RLE object")
        rle = maskops.rle_from_json(rec["segmentation"])
        image_id = int(rec["image_id"])
        category_id = int(rec["category_id"])
        if dataset is not None:
            if image_id not in dataset.images_by_id:
                raise ValidationError(f"result record {i} references unknown image {image_id}")
            if category_id not in dataset.categories_by_id:
                raise ValidationError(
                    f"result record {i} references unknown category {category_id}"
                )
            im = dataset.images_by_id[image_id]
            if (rle.height, rle.width) != (im.height, im.width):
                raise ValidationError(
                    f"result record {i}: rle size {rle.height}x{rle.width} does not match "
                    f"image {image_id} size {im.height}x{im.width}"
                )
        if "bbox" in rec:
            box = _parse_box(rec["bbox"], f"result record {i}")
        else:
            box = maskops.tight_bbox(maskops.rle_decode(rle))
        dets.append(
            Detection(
                image_id=image_id,
                category_id=category_id,
                score=score,
                segmentation=rle,
                bbox=box,
                extra={k: v for k, v in rec.items() if k not in _RESULT_KEYS},
            )
        )
    return dets


def results_to_json(dets: list[Detection]) -> list[dict]:
    return [
        {
            "image_id": d.image_id,
            "category_id": d.category_id,
            "score": d.score,
            "segmentation": maskops.rle_to_json(d.segmentation),
            "bbox": d.bbox.to_list(),
            **d.extra,
        }
        for d in dets
    ]


def write_results(dets: list[Detection], path) -> None:
    """Serialize detections; ``parse_results`` of the output round-trips
    field-for-field (floats written with full precision)."""
    Path(path).write_text(json.dumps(results_to_json(dets)))
