"""COCO-style AP@[0.50:0.95] evaluation for mask (or box) detections.

Matching follows the usual convention: per image and category, detections
are taken in score order and greedily claim the unmatched ground truth with
the highest IoU at or above the threshold. Matches are pooled per category
across images, precision/recall envelopes are sampled at 101 recall points,
and APs are averaged over the 10-threshold grid. Categories without ground
truth are reported absent and excluded from the mean. Crowd ground truths
are excluded from both matching and the ground-truth count.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import maskops
from .coco import Annotation, Dataset, Detection, decode_segmentation
from .errors import ValidationError

DEFAULT_IOU_THRESHOLDS = tuple((50 + 5 * i) / 100 for i in range(10))
DEFAULT_RECALL_POINTS = tuple(i / 100 for i in range(101))


@dataclass(frozen=True)
class EvalParams:
    iou_thresholds: tuple[float, ...] = DEFAULT_IOU_THRESHOLDS
    recall_points: tuple[float, ...] = DEFAULT_RECALL_POINTS
    max_dets_per_image: int = 100
    iou_kind: str = "mask"

    def __post_init__(self) -> None:
        ts = self.iou_thresholds
        if not ts or any(not 0.0 <= t <= 1.0 for t in ts):
            raise ValidationError("iou thresholds must lie in [0, 1]")
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise ValidationError("iou thresholds must be strictly increasing")
        if self.iou_kind not in ("mask", "bbox"):
            raise ValidationError(f"unknown iou kind {self.iou_kind!r}")
        if self.max_dets_per_image < 1:
            raise ValidationError("max_dets_per_image must be positive")


@dataclass
class CategoryResult:
    present: bool
    num_gt: int
    num_det: int
    ap: float | None = None
    ap_per_threshold: list[float] | None = None
    # (thresholds x recall points) precision envelope samples, for reporting
    precision_curves: np.ndarray | None = None


@dataclass
class EvalReport:
    per_category: dict[int, CategoryResult]
    mean_ap: float
    params: EvalParams = field(default_factory=EvalParams)


@dataclass
class MatchResult:
    """Outcome of matching one image+category group at one threshold."""

    order: list[int]  # indices into the input detections, score-sorted, truncated
    tp: list[bool]  # aligned with ``order``
    unmatched_gt: int


def match_image_category(
    gts: Sequence[Annotation],
    dets: Sequence[Detection],
    iou_threshold: float,
    max_dets: int,
    iou_kind: str = "mask",
    image_size: tuple[int, int] | None = None,
) -> MatchResult:
    """Greedy TP/FP assignment for records sharing one image and category.

    Detections are sorted by score descending (ties by input index) and
    truncated to ``max_dets``. Each claims the unmatched ground truth with
    the highest IoU if that IoU reaches the threshold; equal IoUs resolve to
    the lowest ground-truth index. ``image_size`` (height, width) is needed
    only to rasterize polygon ground truths.
    """
    ids = {d.image_id for d in dets} | {g.image_id for g in gts}
    if len(ids) > 1:
        raise ValidationError("match input mixes image ids")
    cats = {d.category_id for d in dets} | {g.category_id for g in gts}
    if len(cats) > 1:
        raise ValidationError("match input mixes category ids")

    order = sorted(range(len(dets)), key=lambda i: (-dets[i].score, i))[:max_dets]
    iou = _iou_matrix([dets[i] for i in order], list(gts), iou_kind, image_size)
    tp, matched = _greedy_match(iou, iou_threshold)
    return MatchResult(order=order, tp=tp, unmatched_gt=len(gts) - matched)


def _iou_matrix(
    dets: list[Detection],
    gts: list[Annotation],
    iou_kind: str,
    image_size: tuple[int, int] | None,
) -> np.ndarray:
    out = np.zeros((len(dets), len(gts)))
    if not dets or not gts:
        return out
    if iou_kind == "bbox":
        for i, d in enumerate(dets):
            for j, g in enumerate(gts):
                out[i, j] = maskops.bbox_iou(d.bbox, g.bbox)
        return out
    if image_size is None:
        rle = dets[0].segmentation
        image_size = (rle.height, rle.width)
    h, w = image_size
    dmasks = [maskops.rle_decode(d.segmentation) for d in dets]
    gmasks = [decode_segmentation(g.segmentation, h, w) for g in gts]
    for i, dm in enumerate(dmasks):
        for j, gm in enumerate(gmasks):
            out[i, j] = maskops.mask_iou(dm, gm)
    return out


def _greedy_match(iou: np.ndarray, threshold: float) -> tuple[list[bool], int]:
    n_det, n_gt = iou.shape
    taken = [False] * n_gt
    tp = [False] * n_det
    matched = 0
    for i in range(n_det):
        best_j = -1
        best_iou = -1.0
        for j in range(n_gt):
            # strict > keeps the lowest ground-truth index on IoU ties
            if not taken[j] and iou[i, j] > best_iou:
                best_iou = iou[i, j]
                best_j = j
        if best_j >= 0 and best_iou >= threshold:
            taken[best_j] = True
            tp[i] = True
            matched += 1
    return tp, matched


def average_precision_101(
    labels: Sequence[bool],
    num_gt: int,
    recall_points: Sequence[float] = DEFAULT_RECALL_POINTS,
) -> float:
    """Interpolated AP of a score-ordered TP/FP sequence."""
    curve = precision_envelope(labels, num_gt, recall_points)
    return float(np.mean(curve)) if len(curve) else 0.0


def precision_envelope(
    labels: Sequence[bool],
    num_gt: int,
    recall_points: Sequence[float] = DEFAULT_RECALL_POINTS,
) -> np.ndarray:
    """Max precision at recall >= r, sampled at each recall point."""
    if num_gt < 1:
        raise ValidationError("precision envelope needs at least one ground truth")
    labels = np.asarray(labels, dtype=bool)
    n = labels.size
    samples = np.zeros(len(recall_points))
    if n == 0:
        return samples
    tp = np.cumsum(labels)
    precision = tp / np.arange(1, n + 1)
    recall = tp / num_gt
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    idx = np.searchsorted(recall, np.asarray(recall_points), side="left")
    valid = idx < n
    samples[valid] = envelope[idx[valid]]
    return samples


def _validate_detections(gt: Dataset, dets: Sequence[Detection]) -> None:
    for i, d in enumerate(dets):
        if d.image_id not in gt.images_by_id:
            raise ValidationError(f"detection {i} references unknown image {d.image_id}")
        if d.category_id not in gt.categories_by_id:
            raise ValidationError(f"detection {i} references unknown category {d.category_id}")
        im = gt.images_by_id[d.image_id]
        rle = d.segmentation
        if (rle.height, rle.width) != (im.height, im.width):
            raise ValidationError(
                f"detection {i}: rle size {rle.height}x{rle.width} does not match "
                f"image {d.image_id} size {im.height}x{im.width}"
            )
        if not 0.0 <= d.score <= 1.0:
            raise ValidationError(f"detection {i}: score {d.score} outside [0, 1]")


def evaluate_map(
    gt: Dataset,
    dets: Sequence[Detection],
    params: EvalParams | None = None,
    jobs: int = 1,
) -> EvalReport:
    """Evaluate detections against a dataset; the headline number is
    ``mean_ap`` (mean over categories of the 10-threshold AP average)."""
    params = params or EvalParams()
    _validate_detections(gt, dets)

    gt_groups: dict[tuple[int, int], list[Annotation]] = {}
    gt_count: dict[int, int] = {c.id: 0 for c in gt.categories}
    for ann in gt.annotations:
        if ann.iscrowd:
            continue
        gt_groups.setdefault((ann.image_id, ann.category_id), []).append(ann)
        gt_count[ann.category_id] += 1

    det_groups: dict[tuple[int, int], list[int]] = {}
    for i, d in enumerate(dets):
        det_groups.setdefault((d.image_id, d.category_id), []).append(i)

    present = {cid for cid, n in gt_count.items() if n > 0}
    work = sorted(k for k in det_groups if k[1] in present)

    def run_group(key: tuple[int, int]):
        image_id, _ = key
        indices = sorted(det_groups[key], key=lambda i: (-dets[i].score, i))
        indices = indices[: params.max_dets_per_image]
        im = gt.images_by_id[image_id]
        iou = _iou_matrix(
            [dets[i] for i in indices],
            gt_groups.get(key, []),
            params.iou_kind,
            (im.height, im.width),
        )
        labels = np.zeros((len(indices), len(params.iou_thresholds)), dtype=bool)
        for t, threshold in enumerate(params.iou_thresholds):
            tp, _ = _greedy_match(iou, threshold)
            labels[:, t] = tp
        return indices, labels

    if jobs > 1 and len(work) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = dict(zip(work, pool.map(run_group, work)))
    else:
        results = {key: run_group(key) for key in work}

    # pool per category in deterministic (image_id, input index) order
    by_cat: dict[int, list[tuple[float, int, int, np.ndarray]]] = {}
    for (image_id, category_id) in work:
        indices, labels = results[(image_id, category_id)]
        rows = by_cat.setdefault(category_id, [])
        for row, i in enumerate(indices):
            rows.append((dets[i].score, image_id, i, labels[row]))

    n_thresh = len(params.iou_thresholds)
    per_category: dict[int, CategoryResult] = {}
    present_aps = []
    for cat in gt.categories:
        num_gt = gt_count[cat.id]
        rows = by_cat.get(cat.id, [])
        if num_gt == 0:
            per_category[cat.id] = CategoryResult(
                present=False, num_gt=0, num_det=len(rows)
            )
            continue
        rows.sort(key=lambda r: (-r[0], r[1], r[2]))
        label_matrix = (
            np.stack([r[3] for r in rows]) if rows else np.zeros((0, n_thresh), dtype=bool)
        )
        curves = np.zeros((n_thresh, len(params.recall_points)))
        ap_per_threshold = []
        for t in range(n_thresh):
            curves[t] = precision_envelope(
                label_matrix[:, t], num_gt, params.recall_points
            )
            ap_per_threshold.append(float(np.mean(curves[t])))
        ap = float(np.mean(ap_per_threshold))
        present_aps.append(ap)
        per_category[cat.id] = CategoryResult(
            present=True,
            num_gt=num_gt,
            num_det=len(rows),
            ap=ap,
            ap_per_threshold=ap_per_threshold,
            precision_curves=curves,
        )

    mean_ap = float(np.mean(present_aps)) if present_aps else 0.0
    return EvalReport(per_category=per_category, mean_ap=mean_ap, params=params)
