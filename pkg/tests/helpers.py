"""Shared constructors for toolkit test data."""

from __future__ import annotations

import numpy as np

from segkit import Annotation, Box, Category, Dataset, Detection, ImageInfo
from segkit import maskops


def mask_from_cols(height: int, width: int, cols) -> np.ndarray:
    m = np.zeros((height, width), dtype=bool)
    m[:, list(cols)] = True
    return m


def mask_from_pixels(height: int, width: int, pixels) -> np.ndarray:
    m = np.zeros((height, width), dtype=bool)
    for r, c in pixels:
        m[r, c] = True
    return m


def annotation(ann_id: int, image_id: int, category_id: int, mask: np.ndarray,
               iscrowd: int = 0) -> Annotation:
    rle = maskops.rle_encode(mask)
    return Annotation(
        id=ann_id,
        image_id=image_id,
        category_id=category_id,
        segmentation=rle,
        area=rle.area,
        bbox=maskops.tight_bbox(mask),
        iscrowd=iscrowd,
    )


def detection(image_id: int, category_id: int, score: float, mask: np.ndarray) -> Detection:
    return Detection(
        image_id=image_id,
        category_id=category_id,
        score=score,
        segmentation=maskops.rle_encode(mask),
        bbox=maskops.tight_bbox(mask),
    )


def dataset(images, categories, annotations) -> Dataset:
    return Dataset(
        images=[ImageInfo(id=i, width=w, height=h) for i, (h, w) in images.items()],
        categories=[Category(id=c, name=n) for c, n in categories.items()],
        annotations=annotations,
    )


def random_blob_mask(rng: np.random.Generator, height: int, width: int,
                     allow_empty: bool = False) -> np.ndarray:
    """Union of one or two random rectangles; avoids empties unless allowed."""
    m = np.zeros((height, width), dtype=bool)
    for _ in range(int(rng.integers(1, 3))):
        y0 = int(rng.integers(0, height))
        x0 = int(rng.integers(0, width))
        y1 = int(rng.integers(y0, height)) + 1
        x1 = int(rng.integers(x0, width)) + 1
        m[y0:y1, x0:x1] = True
    if not allow_empty and not m.any():
        m[0, 0] = True
    return m


def to_nested(mask: np.ndarray) -> list[list[bool]]:
    return [[bool(v) for v in row] for row in mask]


def random_eval_case(rng: np.random.Generator):
    """Random tiny dataset plus detections, in both library and oracle form.

    Bounded at 5 images, 4 categories and 10 detections; some categories end
    up without ground truth and some annotations are crowd-flagged.
    """
    n_images = int(rng.integers(1, 6))
    n_cats = int(rng.integers(1, 5))
    images = {}
    for i in range(1, n_images + 1):
        images[i] = (int(rng.integers(4, 11)), int(rng.integers(4, 11)))
    cats = {c: f"cat{c}" for c in range(1, n_cats + 1)}

    anns = []
    oracle_gts = []
    ann_id = 1
    for cid in cats:
        for _ in range(int(rng.integers(0, 4))):
            img = int(rng.integers(1, n_images + 1))
            h, w = images[img]
            mask = random_blob_mask(rng, h, w)
            iscrowd = int(rng.random() < 0.15)
            anns.append(annotation(ann_id, img, cid, mask, iscrowd))
            box = maskops.tight_bbox(mask)
            oracle_gts.append(
                {"image_id": img, "category_id": cid, "mask": to_nested(mask),
                 "box": (box.x, box.y, box.w, box.h), "iscrowd": iscrowd}
            )
            ann_id += 1

    dets = []
    oracle_dets = []
    for _ in range(int(rng.integers(0, 11))):
        img = int(rng.integers(1, n_images + 1))
        h, w = images[img]
        cid = int(rng.integers(1, n_cats + 1))
        mask = random_blob_mask(rng, h, w, allow_empty=True)
        score = float(rng.random())
        dets.append(detection(img, cid, score, mask))
        box = maskops.tight_bbox(mask)
        oracle_dets.append(
            {"image_id": img, "category_id": cid, "score": score,
             "mask": to_nested(mask), "box": (box.x, box.y, box.w, box.h)}
        )
    ds = dataset(images, cats, anns)
    return ds, dets, oracle_gts, oracle_dets
