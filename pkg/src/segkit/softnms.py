"""Soft non-maximum suppression: decay overlapping detections' scores
instead of deleting them outright.

Supported decay rules, applied against each emitted detection:

* ``hard``     - zero the score when IoU > Nt (classic greedy NMS)
* ``linear``   - multiply by (1 - IoU) when IoU > Nt
* ``gaussian`` - multiply by exp(-IoU^2 / sigma), no threshold

Detections whose score is at or below ``score_floor`` after a decay round
are pruned. Geometry is never modified.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from . import maskops
from .coco import Detection
from .errors import ValidationError

METHODS = ("hard", "linear", "gaussian")
IOU_KINDS = ("mask", "bbox")


@dataclass(frozen=True)
class NmsParams:
    method: str = "gaussian"
    iou_threshold: float = 0.5  # Nt, used by hard/linear
    sigma: float = 0.5  # gaussian only
    score_floor: float = 0.001
    iou_kind: str = "mask"

    def __post_init__(self) -> None:
        if self.method not in METHODS:
            raise ValidationError(f"unknown nms method {self.method!r}")
        if self.iou_kind not in IOU_KINDS:
            raise ValidationError(f"unknown iou kind {self.iou_kind!r}")
        if not 0.0 <= self.iou_threshold <= 1.0:
            raise ValidationError("iou_threshold must be in [0, 1]")
        if not 0.0 <= self.score_floor <= 1.0:
            raise ValidationError("score_floor must be in [0, 1]")
        if self.sigma <= 0:
            raise ValidationError("sigma must be positive")


def _decay_factor(iou: float, params: NmsParams) -> float:
    if params.method == "gaussian":
        return math.exp(-(iou * iou) / params.sigma)
    if iou > params.iou_threshold:
        return 0.0 if params.method == "hard" else 1.0 - iou
    return 1.0


def _content_key(det: Detection) -> tuple:
    # content-based ordering so tied scores resolve the same way no matter
    # how the input list was permuted
    return (
        det.bbox.x,
        det.bbox.y,
        det.bbox.w,
        det.bbox.h,
        tuple(det.segmentation.counts),
    )


class _Candidate:
    __slots__ = ("det", "score", "key", "mask")

    def __init__(self, det: Detection, index: int, mask):
        self.det = det
        self.score = det.score
        self.key = (-det.score, _content_key(det), index)
        self.mask = mask


def soft_nms(dets: list[Detection], params: NmsParams | None = None) -> list[Detection]:
    """Suppress a single image+category group of detections.

    Repeatedly emits the highest-scoring remaining detection, decays every
    other remaining score by the configured rule, and prunes scores that end
    up at or below ``score_floor``. Output is sorted by final score
    descending; the top-scoring input always survives untouched.
    """
    params = params or NmsParams()
    if not dets:
        return []
    if len({d.image_id for d in dets}) > 1:
        raise ValidationError("soft_nms input mixes image ids")
    if len({d.category_id for d in dets}) > 1:
        raise ValidationError("soft_nms input mixes category ids")

    masks = None
    if params.iou_kind == "mask":
        masks = [maskops.rle_decode(d.segmentation) for d in dets]

    remaining = [
        _Candidate(d, i, masks[i] if masks is not None else None)
        for i, d in enumerate(dets)
    ]
    out: list[Detection] = []
    while remaining:
        best = min(remaining, key=lambda c: (-c.score, c.key))
        remaining.remove(best)
        d = best.det
        out.append(d if best.score == d.score else _rescored(d, best.score))
        survivors = []
        for cand in remaining:
            if params.iou_kind == "mask":
                iou = maskops.mask_iou(best.mask, cand.mask)
            else:
                iou = maskops.bbox_iou(d.bbox, cand.det.bbox)
            cand.score *= _decay_factor(iou, params)
            if cand.score > params.score_floor:
                survivors.append(cand)
        remaining = survivors
    return out


def _rescored(det: Detection, score: float) -> Detection:
    return Detection(
        image_id=det.image_id,
        category_id=det.category_id,
        score=score,
        segmentation=det.segmentation,
        bbox=det.bbox,
        extra=dict(det.extra),
    )


def soft_nms_grouped(dets: list[Detection], params: NmsParams | None = None) -> list[Detection]:
    """Apply :func:`soft_nms` per (image_id, category_id) group.

    Groups are processed and concatenated in sorted key order, so the output
    does not depend on input ordering or any parallel schedule.
    """
    params = params or NmsParams()
    groups: dict[tuple[int, int], list[Detection]] = {}
    for d in dets:
        groups.setdefault((d.image_id, d.category_id), []).append(d)
    out: list[Detection] = []
    for key in sorted(groups):
        out.extend(soft_nms(groups[key], params))
    return out
