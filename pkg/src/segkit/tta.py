"""Flip test-time augmentation: map detections made on mirrored images back
to original coordinates, then fuse branches with Soft-NMS."""

from __future__ import annotations

from . import maskops
from .coco import Detection
from .errors import ValidationError
from .softnms import NmsParams, soft_nms_grouped


def unflip_detections(dets: list[Detection], image_width: int) -> list[Detection]:
    """Undo a horizontal flip on every detection of one image. Scores are
    untouched; applying this twice is the identity."""
    out = []
    for d in dets:
        mask = maskops.rle_decode(d.segmentation)
        flipped, box = maskops.hflip_geometry(mask, d.bbox, image_width)
        out.append(
            Detection(
                image_id=d.image_id,
                category_id=d.category_id,
                score=d.score,
                segmentation=maskops.rle_encode(flipped),
                bbox=box,
                extra=dict(d.extra),
            )
        )
    return out


def fuse_detections(
    branches: list[list[Detection]], params: NmsParams | None = None
) -> list[Detection]:
    """Merge same-image detection branches: concatenate, then per-category
    Soft-NMS. Flipped branches must already be unflipped."""
    merged = [d for branch in branches for d in branch]
    if len({d.image_id for d in merged}) > 1:
        raise ValidationError("fuse_detections branches mix image ids")
    return soft_nms_grouped(merged, params or NmsParams())
