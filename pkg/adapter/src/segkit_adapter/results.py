"""Convert per-image detection dumps to the flat COCO-style results JSON.

Input is a list over images, each record ``{"image_id": int, "instances":
[{"category_id", "score", "segmentation": {"size": [h, w], "counts":
ints-or-compressed-string}, "bbox": [x, y, w, h] (optional)}]}``, stored as
JSON (.json) or a pickle of the same structure. Compressed count strings are
expanded to integer arrays; a missing bbox is filled with the tight box of
the encoded mask. Pure format conversion, no scoring or geometry transforms.
"""

from __future__ import annotations

import argparse
import json
import logging
import pickle
import sys
from pathlib import Path

from . import AdapterError

log = logging.getLogger("segkit_adapter")


def decode_counts_string(s: str) -> list[int]:
    """Expand the 6-bits-per-char count encoding (ascii 48..111, counts
    after the third delta-coded against the value two back)."""
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
                raise AdapterError(f"invalid character in encoded counts at position {p}")
            x |= (c & 0x1F) << (5 * k)
            more = bool(c & 0x20)
            p += 1
            k += 1
            if more and p >= n:
                raise AdapterError("truncated encoded counts string")
            if not more and (c & 0x10):
                x |= -1 << (5 * k)
        if len(counts) > 2:
            x += counts[-2]
        counts.append(x)
    return counts


def bbox_from_counts(counts: list[int], height: int, width: int) -> list[float]:
    """Tight [x, y, w, h] of the foreground runs, walked directly on the
    column-major run list (no dense decode)."""
    min_r = height
    max_r = -1
    min_c = width
    max_c = -1
    pos = 0
    for i, run in enumerate(counts):
        if i % 2 == 1 and run > 0:
            start, end = pos, pos + run - 1
            c0, c1 = start // height, end // height
            if c1 > c0:
                r0, r1 = 0, height - 1
            else:
                r0, r1 = start % height, end % height
            min_r = min(min_r, r0)
            max_r = max(max_r, r1)
            min_c = min(min_c, c0)
            max_c = max(max_c, c1)
        pos += run
    if max_r < 0:
        return [0.0, 0.0, 0.0, 0.0]
    return [float(min_c), float(min_r), float(max_c - min_c + 1), float(max_r - min_r + 1)]


def _load_per_image(path) -> list:
    p = Path(path)
    try:
        if p.suffix == ".json":
            doc = json.loads(p.read_text())
        else:
            with open(p, "rb") as fh:
                doc = pickle.load(fh)
    except OSError as e:
        raise AdapterError(f"cannot read results {path}: {e}") from e
    except (json.JSONDecodeError, pickle.UnpicklingError) as e:
        raise AdapterError(f"{path}: cannot parse per-image results: {e}") from e
    if not isinstance(doc, list):
        raise AdapterError(f"{path}: expected a list of per-image records")
    return doc


def convert_records(per_image: list) -> list[dict]:
    out = []
    bad: list[str] = []
    for pi, rec in enumerate(per_image):
        if not isinstance(rec, dict) or "image_id" not in rec:
            bad.append(f"image[{pi}]: no image_id")
            continue
        image_id = int(rec["image_id"])
        for ii, inst in enumerate(rec.get("instances", [])):
            missing = [k for k in ("score", "segmentation") if k not in inst]
            if missing:
                bad.append(f"image[{pi}].instances[{ii}]: missing {', '.join(missing)}")
                continue
            seg = inst["segmentation"]
            if not isinstance(seg, dict) or "size" not in seg or "counts" not in seg:
                bad.append(f"image[{pi}].instances[{ii}]: malformed segmentation")
                continue
            h, w = int(seg["size"][0]), int(seg["size"][1])
            raw = seg["counts"]
            if isinstance(raw, bytes):
                raw = raw.decode("ascii")
            counts = decode_counts_string(raw) if isinstance(raw, str) else [int(c) for c in raw]
            if sum(counts) != h * w:
                bad.append(
                    f"image[{pi}].instances[{ii}]: counts sum {sum(counts)} != {h * w}"
                )
                continue
            bbox = inst.get("bbox")
            if bbox is None:
                bbox = bbox_from_counts(counts, h, w)
            out.append(
                {
                    "image_id": image_id,
                    "category_id": int(inst.get("category_id", 1)),
                    "score": float(inst["score"]),
                    "segmentation": {"size": [h, w], "counts": counts},
                    "bbox": [float(v) for v in bbox],
                }
            )
    if bad:
        raise AdapterError("bad result records: " + "; ".join(bad))
    return out


def export_results(in_path, out_path) -> None:
    records = convert_records(_load_per_image(in_path))
    Path(out_path).write_text(json.dumps(records))
    log.info("wrote %d detections -> %s", len(records), out_path)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="python -m segkit_adapter.results",
        description="Convert per-image detection dumps to COCO-style results JSON.",
    )
    parser.add_argument("input", help="per-image results (.json or pickle)")
    parser.add_argument("output", help="flat results JSON path")
    args = parser.parse_args(argv)
    logging.basicConfig(stream=sys.stderr, level=logging.INFO, format="%(message)s")
    try:
        export_results(args.input, args.output)
    except AdapterError as e:
        log.error("%s", e)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
