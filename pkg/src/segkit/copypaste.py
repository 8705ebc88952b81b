"""Training-data augmentation: the geometric chain (scale jitter, crop, pad,
flip) and instance transplanting between images with occlusion-consistent
annotation updates.

Everything is driven by an explicit numpy Generator (or integer seed), so a
given seed and input always produce bit-identical output. Pixel buffers are
optional: without them the same mask bookkeeping runs in annotation-only
mode.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import maskops
from .coco import Annotation, Dataset, ImageInfo, decode_segmentation
from .errors import SegkitError, ValidationError


@dataclass(frozen=True)
class AugmentParams:
    short_side_min: int = 720
    short_side_max: int = 1620
    long_side_cap: int = 1920
    crop_size: tuple[int, int] = (1920, 1080)  # (width, height)
    hflip_prob: float = 0.5
    paste_count_range: tuple[int, int] = (1, 3)
    min_remaining_area: int = 1
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0 < self.short_side_min <= self.short_side_max:
            raise ValidationError("need 0 < short_side_min <= short_side_max")
        if self.crop_size[0] <= 0 or self.crop_size[1] <= 0:
            raise ValidationError("crop dimensions must be positive")
        lo, hi = self.paste_count_range
        if lo < 0 or hi < lo:
            raise ValidationError("paste_count_range must satisfy 0 <= min <= max")
        if not 0.0 <= self.hflip_prob <= 1.0:
            raise ValidationError("hflip_prob must be in [0, 1]")


@dataclass
class AnnotatedImage:
    info: ImageInfo
    annotations: list[Annotation] = field(default_factory=list)
    pixels: np.ndarray | None = None  # (height, width, 3) uint8


def _as_rng(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def scale_factor(width: int, height: int, target_short: float, params: AugmentParams) -> float:
    """Resize factor mapping the short side to ``target_short``, reduced so
    the long side never exceeds ``long_side_cap``."""
    short = min(width, height)
    long = max(width, height)
    f = target_short / short
    return min(f, params.long_side_cap / long)


def _resize_nearest(arr: np.ndarray, new_h: int, new_w: int) -> np.ndarray:
    old_h, old_w = arr.shape[:2]
    rows = np.clip(((np.arange(new_h) + 0.5) * (old_h / new_h)).astype(np.int64), 0, old_h - 1)
    cols = np.clip(((np.arange(new_w) + 0.5) * (old_w / new_w)).astype(np.int64), 0, old_w - 1)
    return arr[rows][:, cols]


def _rebuild(mask: np.ndarray, template: Annotation, image_id: int, ann_id: int) -> Annotation:
    rle = maskops.rle_encode(mask)
    return Annotation(
        id=ann_id,
        image_id=image_id,
        category_id=template.category_id,
        segmentation=rle,
        area=rle.area,
        bbox=maskops.tight_bbox(mask),
        iscrowd=template.iscrowd,
        extra=dict(template.extra),
    )


def _decoded(ann: Annotation, info: ImageInfo) -> np.ndarray:
    return decode_segmentation(ann.segmentation, info.height, info.width)


def geometric_augment(ai: AnnotatedImage, params: AugmentParams, rng) -> AnnotatedImage:
    """Scale-jitter, crop, pad and maybe flip one image with its annotations.

    Draw order from ``rng``: target short side (integer, inclusive range),
    crop x offset, crop y offset, flip coin. Annotations are transformed
    with nearest-neighbor masks; ones left empty by the crop are dropped,
    and areas/bboxes are recomputed from the transformed masks. Output
    dimensions are always exactly ``crop_size``.
    """
    rng = _as_rng(rng)
    if ai.info.width <= 0 or ai.info.height <= 0:
        raise ValidationError(f"image {ai.info.id} has non-positive dimensions")
    target_short = int(rng.integers(params.short_side_min, params.short_side_max + 1))
    f = scale_factor(ai.info.width, ai.info.height, target_short, params)
    new_w = max(1, round(ai.info.width * f))
    new_h = max(1, round(ai.info.height * f))
    cw, ch = params.crop_size
    x0 = int(rng.integers(0, max(new_w - cw, 0) + 1))
    y0 = int(rng.integers(0, max(new_h - ch, 0) + 1))
    flip = bool(rng.random() < params.hflip_prob)

    def transform(plane: np.ndarray) -> np.ndarray:
        scaled = _resize_nearest(plane, new_h, new_w)
        shape = (ch, cw) + plane.shape[2:]
        canvas = np.zeros(shape, dtype=plane.dtype)
        window = scaled[y0 : y0 + ch, x0 : x0 + cw]
        canvas[: window.shape[0], : window.shape[1]] = window
        if flip:
            canvas = canvas[:, ::-1].copy()
        return canvas

    annotations = []
    for ann in ai.annotations:
        mask = transform(_decoded(ann, ai.info))
        if not mask.any():
            continue
        annotations.append(_rebuild(mask, ann, ai.info.id, ann.id))

    pixels = transform(ai.pixels) if ai.pixels is not None else None
    info = replace(ai.info, width=cw, height=ch, extra=dict(ai.info.extra))
    return AnnotatedImage(info=info, annotations=annotations, pixels=pixels)


class _PasteCandidate:
    __slots__ = ("patch", "pixel_patch", "annotation")

    def __init__(self, patch, pixel_patch, annotation):
        self.patch = patch
        self.pixel_patch = pixel_patch
        self.annotation = annotation


def donor_pool(donors: list[AnnotatedImage], frame_height: int, frame_width: int) -> list:
    """Pasteable instance patches: non-crowd, non-empty, and small enough to
    sit fully inside a ``frame_height`` x ``frame_width`` image."""
    pool = []
    for donor in donors:
        for ann in donor.annotations:
            if ann.iscrowd:
                continue
            mask = _decoded(ann, donor.info)
            box = maskops.tight_bbox(mask)
            if box.w == 0 or box.h == 0:
                continue
            y, x, h, w = int(box.y), int(box.x), int(box.h), int(box.w)
            if h > frame_height or w > frame_width:
                continue
            patch = mask[y : y + h, x : x + w]
            pixel_patch = (
                donor.pixels[y : y + h, x : x + w] if donor.pixels is not None else None
            )
            pool.append(_PasteCandidate(patch, pixel_patch, ann))
    return pool


def copy_paste(
    target: AnnotatedImage,
    donors: list[AnnotatedImage],
    params: AugmentParams,
    rng,
) -> AnnotatedImage:
    """Paste donor instances into the target at uniform random positions.

    Draw order from ``rng``: paste count k (inclusive range), then per paste
    the pool index, x offset, y offset. Later pastes occlude earlier ones;
    every pre-existing mask is set-subtracted by the pasted union, and
    annotations whose remaining area drops under ``min_remaining_area`` are
    removed. Pasted instances are appended as new annotations with fresh ids.
    """
    rng = _as_rng(rng)
    height, width = target.info.height, target.info.width
    k = int(rng.integers(params.paste_count_range[0], params.paste_count_range[1] + 1))
    if k == 0:
        return AnnotatedImage(
            info=replace(target.info, extra=dict(target.info.extra)),
            annotations=list(target.annotations),
            pixels=None if target.pixels is None else target.pixels.copy(),
        )

    pool = donor_pool(donors, height, width)
    if not pool:
        raise SegkitError(
            "copy-paste donor pool is empty: no donor instance fits the "
            f"{width}x{height} target frame"
        )

    placed: list[tuple[np.ndarray, _PasteCandidate, tuple[int, int]]] = []
    for _ in range(k):
        cand = pool[int(rng.integers(0, len(pool)))]
        ph, pw = cand.patch.shape
        x0 = int(rng.integers(0, width - pw + 1))
        y0 = int(rng.integers(0, height - ph + 1))
        full = np.zeros((height, width), dtype=bool)
        full[y0 : y0 + ph, x0 : x0 + pw] = cand.patch
        placed.append((full, cand, (y0, x0)))

    # resolve z-order: each paste keeps only pixels not covered later
    final_masks: list[np.ndarray] = [None] * k  # type: ignore[list-item]
    cover = np.zeros((height, width), dtype=bool)
    for i in range(k - 1, -1, -1):
        final_masks[i] = placed[i][0] & ~cover
        cover |= placed[i][0]

    next_id = max((a.id for a in target.annotations), default=0) + 1
    annotations = []
    for ann in target.annotations:
        remaining = _decoded(ann, target.info) & ~cover
        if int(np.count_nonzero(remaining)) < params.min_remaining_area:
            continue
        annotations.append(_rebuild(remaining, ann, target.info.id, ann.id))

    pixels = None if target.pixels is None else target.pixels.copy()
    for (full, cand, (y0, x0)), final in zip(placed, final_masks):
        ph, pw = cand.patch.shape
        if pixels is not None and cand.pixel_patch is not None:
            region = pixels[y0 : y0 + ph, x0 : x0 + pw]
            region[cand.patch] = cand.pixel_patch[cand.patch]
        if int(np.count_nonzero(final)) < params.min_remaining_area:
            continue  # fully hidden behind a later paste
        annotations.append(_rebuild(final, cand.annotation, target.info.id, next_id))
        next_id += 1

    info = replace(target.info, extra=dict(target.info.extra))
    return AnnotatedImage(info=info, annotations=annotations, pixels=pixels)


def augment_dataset(
    dataset: Dataset,
    params: AugmentParams,
    pixels: dict[int, np.ndarray] | None = None,
    enable_paste: bool = True,
    jobs: int = 1,
) -> tuple[Dataset, dict[int, np.ndarray]]:
    """Run the full augmentation chain over every image of a dataset.

    Each image gets its own generator seeded with ``params.seed ^ image_id``
    and consumes a fixed draw sequence (geometry first, then paste), so the
    result is independent of scheduling. The donor for an image is one
    uniformly chosen augmented image that has pasteable instances,
    preferring other images over the target itself. Annotation ids are
    reassigned sequentially over the output.
    """
    from concurrent.futures import ThreadPoolExecutor

    by_image = dataset.annotations_by_image()
    sources = [
        AnnotatedImage(
            info=im,
            annotations=by_image[im.id],
            pixels=None if pixels is None else pixels.get(im.id),
        )
        for im in dataset.images
    ]
    rngs = [np.random.default_rng(params.seed ^ im.id) for im in dataset.images]

    def phase_one(i: int) -> AnnotatedImage:
        return geometric_augment(sources[i], params, rngs[i])

    if jobs > 1 and len(sources) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            augmented = list(pool.map(phase_one, range(len(sources))))
    else:
        augmented = [phase_one(i) for i in range(len(sources))]

    if enable_paste:
        ch, cw = params.crop_size[1], params.crop_size[0]
        pasteable = [i for i, ai in enumerate(augmented) if donor_pool([ai], ch, cw)]
        results = []
        for i, ai in enumerate(augmented):
            candidates = [j for j in pasteable if j != i] or (
                pasteable if i in pasteable else []
            )
            if not candidates:
                results.append(ai)
                continue
            donor = augmented[candidates[int(rngs[i].integers(0, len(candidates)))]]
            results.append(copy_paste(ai, [donor], params, rngs[i]))
        augmented = results

    out_images = []
    out_annotations = []
    out_pixels: dict[int, np.ndarray] = {}
    next_id = 1
    for ai in augmented:
        out_images.append(ai.info)
        if ai.pixels is not None:
            out_pixels[ai.info.id] = ai.pixels
        for ann in ai.annotations:
            out_annotations.append(
                Annotation(
                    id=next_id,
                    image_id=ann.image_id,
                    category_id=ann.category_id,
                    segmentation=ann.segmentation,
                    area=ann.area,
                    bbox=ann.bbox,
                    iscrowd=ann.iscrowd,
                    extra=dict(ann.extra),
                )
            )
            next_id += 1
    out = Dataset(out_images, dataset.categories, out_annotations, extra=dict(dataset.extra))
    return out, out_pixels
