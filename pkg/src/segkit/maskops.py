"""Binary-mask kernel: RLE codec, polygon rasterization, IoU, flips.

Dense masks are numpy arrays of shape ``(height, width)`` and dtype bool.
The RLE convention is COCO's: column-major pixel scan, runs alternating
background/foreground starting with a (possibly zero-length) background run.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ValidationError


@dataclass(frozen=True)
class Box:
    """Axis-aligned rectangle: (x, y) top-left corner, w/h extents in pixels."""

    x: float
    y: float
    w: float
    h: float

    def to_list(self) -> list[float]:
        return [self.x, self.y, self.w, self.h]


@dataclass
class Rle:
    """Run-length encoded mask, column-major scan, background-first runs."""

    height: int
    width: int
    counts: list[int] = field(default_factory=list)

    def __post_init__(self) -> None:
        if self.height < 0 or self.width < 0:
            raise ValidationError(f"rle size must be non-negative, got {self.height}x{self.width}")
        if any(c < 0 for c in self.counts):
            raise ValidationError("rle counts must be non-negative")
        total = sum(self.counts)
        if total != self.height * self.width:
            raise ValidationError(
                f"rle counts sum to {total}, expected {self.height}x{self.width}"
                f" = {self.height * self.width}"
            )

    @property
    def area(self) -> int:
        """Foreground pixel count (odd-indexed runs), without decoding."""
        return int(sum(self.counts[1::2]))


def rle_encode(mask: np.ndarray) -> Rle:
    """Encode a dense binary mask. Inverse of :func:`rle_decode`."""
    mask = np.asarray(mask, dtype=bool)
    if mask.ndim != 2:
        raise ValidationError(f"mask must be 2-D, got shape {mask.shape}")
    h, w = mask.shape
    flat = mask.ravel(order="F")
    if flat.size == 0:
        return Rle(h, w, [])
    # indices where the run value changes
    change = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    bounds = np.concatenate(([0], change, [flat.size]))
    counts = np.diff(bounds).tolist()
    if flat[0]:
        counts.insert(0, 0)
    return Rle(h, w, counts)


def rle_decode(rle: Rle) -> np.ndarray:
    """Decode to a dense (height, width) bool mask."""
    n = rle.height * rle.width
    if n == 0:
        return np.zeros((rle.height, rle.width), dtype=bool)
    values = np.zeros(len(rle.counts), dtype=bool)
    values[1::2] = True
    flat = np.repeat(values, rle.counts)
    return flat.reshape((rle.height, rle.width), order="F")


def rle_to_json(rle: Rle, compressed: bool = False) -> dict:
    """COCO-style JSON object ``{"size": [h, w], "counts": ...}``."""
    counts: list[int] | str = rle_to_string(rle) if compressed else list(rle.counts)
    return {"size": [rle.height, rle.width], "counts": counts}


def rle_from_json(obj: dict) -> Rle:
    """Parse ``{"size": [h, w], "counts": [...]|"..."}``, either counts form."""
    if not isinstance(obj, dict) or "size" not in obj or "counts" not in obj:
        raise ValidationError(f"rle object must have 'size' and 'counts' keys, got {obj!r}")
    size = obj["size"]
    if not (isinstance(size, (list, tuple)) and len(size) == 2):
        raise ValidationError(f"rle size must be [height, width], got {size!r}")
    h, w = int(size[0]), int(size[1])
    counts = obj["counts"]
    if isinstance(counts, str):
        return rle_from_string(counts, h, w)
    if not isinstance(counts, (list, tuple)):
        raise ValidationError("rle counts must be an integer array or an encoded string")
    return Rle(h, w, [int(c) for c in counts])


def rle_to_string(rle: Rle) -> str:
    """Compress counts into COCO's LEB128-like string (6 bits per char,
    ascii 48..111, counts after the third delta-coded against two back)."""
    out: list[str] = []
    counts = rle.counts
    for i, c in enumerate(counts):
        x = c - counts[i - 2] if i > 2 else c
        more = True
        while more:
            ch = x & 0x1F
            x >>= 5
            more = (x != -1) if (ch & 0x10) else (x != 0)
            if more:
                ch |= 0x20
            out.append(chr(ch + 48))
    return "".join(out)


def rle_from_string(s: str, height: int, width: int) -> Rle:
    """Inverse of :func:`rle_to_string`."""
    counts: list[int] = []
    p = 0
    n = len(s)
    while p < n:
        x = 0
        k = 0
        more = True
        while more:
            c = ord(s[p]) - 48
            if c < 0 or c > 63:
                raise ValidationError(f"invalid character in encoded rle at position {p}")
            x |= (c & 0x1F) << (5 * k)
            more = bool(c & 0x20)
            p += 1
            k += 1
            if more and p >= n:
                raise ValidationError("truncated encoded rle string")
            if not more and (c & 0x10):
                x |= -1 << (5 * k)
        if len(counts) > 2:
            x += counts[-2]
        counts.append(x)
    return Rle(height, width, counts)


def rasterize_polygons(polys: Sequence[Sequence[float]], height: int, width: int) -> np.ndarray:
    """Fill the union of polygons onto a (height, width) grid.

    Each polygon is a flat [x0, y0, x1, y1, ...] vertex list. A pixel (row,
    col) is foreground iff its center (col + 0.5, row + 0.5) is inside the
    polygon under the even-odd rule. Scanline fill; output clipped to the
    image. Polygons with fewer than 3 vertices are rejected.
    """
    mask = np.zeros((height, width), dtype=bool)
    for poly in polys:
        if len(poly) % 2 != 0:
            raise ValidationError(f"polygon has odd coordinate count {len(poly)}")
        if len(poly) < 6:
            raise ValidationError(f"polygon needs at least 3 vertices, got {len(poly) // 2}")
        _fill_polygon(mask, poly, height, width)
    return mask


def _fill_polygon(mask: np.ndarray, poly: Sequence[float], height: int, width: int) -> None:
    xs = [float(v) for v in poly[0::2]]
    ys = [float(v) for v in poly[1::2]]
    nv = len(xs)
    row_lo = max(0, int(math.floor(min(ys) - 0.5)))
    row_hi = min(height - 1, int(math.ceil(max(ys))))
    for row in range(row_lo, row_hi + 1):
        py = row + 0.5
        hits: list[float] = []
        for i in range(nv):
            x1, y1 = xs[i], ys[i]
            x2, y2 = xs[(i + 1) % nv], ys[(i + 1) % nv]
            # half-open in y so a scanline through a vertex counts once
            if (y1 <= py < y2) or (y2 <= py < y1):
                hits.append(x1 + (py - y1) * (x2 - x1) / (y2 - y1))
        if not hits:
            continue
        hits.sort()
        for j in range(0, len(hits) - 1, 2):
            xa, xb = hits[j], hits[j + 1]
            # centers c + 0.5 in [xa, xb)
            c0 = max(0, math.ceil(xa - 0.5))
            c1 = min(width, math.ceil(xb - 0.5))
            if c1 > c0:
                mask[row, c0:c1] = True


def mask_area(mask: np.ndarray) -> int:
    return int(np.count_nonzero(mask))


def mask_iou(a: np.ndarray, b: np.ndarray) -> float:
    """Pixelwise intersection-over-union; 0.0 when both masks are empty."""
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise ValidationError(f"mask shapes differ: {a.shape} vs {b.shape}")
    union = np.count_nonzero(a | b)
    if union == 0:
        return 0.0
    return np.count_nonzero(a & b) / union


def bbox_iou(a: Box, b: Box) -> float:
    """Rectangle IoU; 0.0 when the union has no area."""
    ix = min(a.x + a.w, b.x + b.w) - max(a.x, b.x)
    iy = min(a.y + a.h, b.y + b.h) - max(a.y, b.y)
    inter = max(0.0, ix) * max(0.0, iy)
    union = a.w * a.h + b.w * b.h - inter
    if union <= 0:
        return 0.0
    return inter / union


def tight_bbox(mask: np.ndarray) -> Box:
    """Smallest box covering the foreground; zero box for an empty mask."""
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    if rows.size == 0:
        return Box(0.0, 0.0, 0.0, 0.0)
    y0, y1 = int(rows[0]), int(rows[-1])
    x0, x1 = int(cols[0]), int(cols[-1])
    return Box(float(x0), float(y0), float(x1 - x0 + 1), float(y1 - y0 + 1))


def hflip_geometry(mask: np.ndarray, box: Box, image_width: int) -> tuple[np.ndarray, Box]:
    """Mirror a mask/box pair around the vertical image axis. Involution."""
    mask = np.asarray(mask, dtype=bool)
    if mask.shape[1] != image_width:
        raise ValidationError(
            f"mask width {mask.shape[1]} does not match image width {image_width}"
        )
    flipped = mask[:, ::-1].copy()
    return flipped, Box(image_width - box.x - box.w, box.y, box.w, box.h)
