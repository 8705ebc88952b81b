"""``segkit`` command line: every pipeline stage as one subcommand.

Exit codes: 0 success, 1 validation/data error, 2 usage error. Every value
flag can also come from a JSON config file (``--config``); explicit flags
win over the file, the file wins over built-in defaults. Logs go to stderr,
data to files or stdout.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__, coco, cocoeval, copypaste, ensemble, report, softnms, swa, tta
from .errors import ParseError, SegkitError

log = logging.getLogger("segkit")

NMS_DEFAULTS = {
    "method": "gaussian",
    "sigma": 0.5,
    "nt": 0.5,
    "score_floor": 0.001,
    "iou": "mask",
}

AUGMENT_DEFAULTS = {
    "seed": 0,
    "short_min": 720,
    "short_max": 1620,
    "long_cap": 1920,
    "crop_width": 1920,
    "crop_height": 1080,
    "hflip_prob": 0.5,
    "paste_min": 1,
    "paste_max": 3,
    "min_remaining_area": 1,
    "paste": True,
    "jobs": 1,
}

# documented stage defaults: first training stage uses SGD at 0.02, the
# averaged fine-tune stage uses AdamW at 1e-4
STAGE1_SGD_LR = 0.02
SWA_ADAMW_LR = 0.0001

SCHEDULE_DEFAULTS = {"start": SWA_ADAMW_LR, "end": SWA_ADAMW_LR / 10, "steps": 1000, "cycles": 12}

EVAL_DEFAULTS = {"iou": "mask", "max_dets": 100, "jobs": 1}


def _add_version(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--version", action="version", version=f"segkit {__version__}")


def _add_config(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--config", help="JSON file of flag defaults (keys are flag dest names)"
    )


def _add_nms_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--method", choices=softnms.METHODS, help="decay rule")
    parser.add_argument("--sigma", type=float, help="gaussian decay width")
    parser.add_argument(
        "--nt", "--iou-threshold", dest="nt", type=float, help="hard/linear IoU threshold"
    )
    parser.add_argument("--score-floor", type=float, help="prune decayed scores at or below this")
    parser.add_argument("--iou", choices=softnms.IOU_KINDS, help="overlap measure")


def _resolve(args: argparse.Namespace, defaults: dict) -> argparse.Namespace:
    """Apply flag > config-file > default precedence."""
    cfg = {}
    path = getattr(args, "config", None)
    if path:
        try:
            cfg = json.loads(Path(path).read_text())
        except OSError as e:
            raise ParseError(f"cannot read config {path}: {e}") from e
        except json.JSONDecodeError as e:
            raise ParseError(f"{path}: malformed JSON at byte offset {e.pos}") from e
        if not isinstance(cfg, dict):
            raise ParseError(f"{path}: config must be a JSON object")
        unknown = set(cfg) - set(vars(args))
        if unknown:
            log.warning("config keys not understood: %s", sorted(unknown))
    ns = argparse.Namespace(**vars(args))
    for key, value in vars(args).items():
        if value is not None:
            continue
        if key in cfg:
            setattr(ns, key, cfg[key])
        elif key in defaults:
            setattr(ns, key, defaults[key])
    return ns


def _nms_params(ns: argparse.Namespace) -> softnms.NmsParams:
    return softnms.NmsParams(
        method=ns.method,
        iou_threshold=ns.nt,
        sigma=ns.sigma,
        score_floor=ns.score_floor,
        iou_kind=ns.iou,
    )


def _load_png(path: Path) -> np.ndarray:
    from PIL import Image

    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"))


def _save_png(path: Path, pixels: np.ndarray) -> None:
    from PIL import Image

    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(pixels).save(path, format="PNG")


def cmd_augment(args: argparse.Namespace) -> int:
    ns = _resolve(args, AUGMENT_DEFAULTS)
    dataset = coco.parse_dataset(ns.dataset)
    pixels = None
    if ns.images:
        pixels = {}
        for im in dataset.images:
            src = Path(ns.images) / im.file_name
            if src.exists():
                pixels[im.id] = _load_png(src)
            else:
                log.warning("no pixel file for image %s (%s)", im.id, src)
    params = copypaste.AugmentParams(
        short_side_min=ns.short_min,
        short_side_max=ns.short_max,
        long_side_cap=ns.long_cap,
        crop_size=(ns.crop_width, ns.crop_height),
        hflip_prob=ns.hflip_prob,
        paste_count_range=(ns.paste_min, ns.paste_max),
        min_remaining_area=ns.min_remaining_area,
        seed=ns.seed,
    )
    out_ds, out_pixels = copypaste.augment_dataset(
        dataset, params, pixels=pixels, enable_paste=ns.paste, jobs=ns.jobs
    )
    coco.write_dataset(out_ds, ns.out)
    if ns.out_images and out_pixels:
        for im in out_ds.images:
            if im.id in out_pixels:
                _save_png(Path(ns.out_images) / im.file_name, out_pixels[im.id])
    log.info(
        "augmented %d images, %d annotations -> %s",
        len(out_ds.images), len(out_ds.annotations), ns.out,
    )
    return 0


def cmd_nms(args: argparse.Namespace) -> int:
    ns = _resolve(args, NMS_DEFAULTS)
    dataset = coco.parse_dataset(ns.dataset) if ns.dataset else None
    dets = coco.parse_results(ns.input, dataset)
    out = softnms.soft_nms_grouped(dets, _nms_params(ns))
    coco.write_results(out, ns.output)
    log.info("soft-nms kept %d of %d detections -> %s", len(out), len(dets), ns.output)
    return 0


def _widths_for(ns: argparse.Namespace, dets: list) -> dict[int, int]:
    if ns.widths:
        raw = json.loads(Path(ns.widths).read_text())
        return {int(k): int(v) for k, v in raw.items()}
    if ns.dataset:
        dataset = coco.parse_dataset(ns.dataset)
        return {im.id: im.width for im in dataset.images}
    # fall back to the flipped detections' own RLE sizes
    return {d.image_id: d.segmentation.width for d in dets}


def cmd_tta_merge(args: argparse.Namespace) -> int:
    ns = _resolve(args, NMS_DEFAULTS)
    dataset = coco.parse_dataset(ns.dataset) if ns.dataset else None
    original = coco.parse_results(ns.original, dataset)
    flipped = coco.parse_results(ns.flipped, dataset)
    widths = _widths_for(ns, flipped)
    params = _nms_params(ns)

    by_image: dict[int, list[list]] = {}
    for d in original:
        by_image.setdefault(d.image_id, [[], []])[0].append(d)
    for d in flipped:
        by_image.setdefault(d.image_id, [[], []])[1].append(d)
    fused = []
    for image_id in sorted(by_image):
        orig_branch, flip_branch = by_image[image_id]
        if flip_branch:
            if image_id not in widths:
                raise SegkitError(f"no image width known for image {image_id}")
            flip_branch = tta.unflip_detections(flip_branch, widths[image_id])
        fused.extend(tta.fuse_detections([orig_branch, flip_branch], params))
    coco.write_results(fused, ns.out)
    log.info("fused %d images -> %s", len(by_image), ns.out)
    return 0


def _route_spec(text: str) -> dict[str, str]:
    spec = {}
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if "=" not in part:
            raise argparse.ArgumentTypeError(f"bad route entry {part!r}, expected name=A|B")
        name, src = part.split("=", 1)
        spec[name.strip()] = src.strip()
    return spec


def cmd_ensemble(args: argparse.Namespace) -> int:
    ns = _resolve(args, {**NMS_DEFAULTS, "mode": None})
    dataset = coco.parse_dataset(ns.dataset)
    a = coco.parse_results(ns.a, dataset)
    b = coco.parse_results(ns.b, dataset)
    spec: dict[str, str] = {}
    mode = ns.mode
    if ns.routing_config:
        raw = json.loads(Path(ns.routing_config).read_text())
        spec = {"default": raw.get("default", "A"), **raw.get("overrides", {})}
        mode = mode or raw.get("mode")
    if ns.route:
        spec = {**spec, **ns.route}
    routing = ensemble.routing_from_names(spec or {"default": "A"}, dataset, mode or "route")
    out = ensemble.integrate_by_category(
        a, b, routing,
        nms_params=_nms_params(ns),
        valid_categories=set(dataset.categories_by_id),
    )
    coco.write_results(out, ns.out)
    log.info("integrated %d + %d -> %d detections (%s mode)", len(a), len(b), len(out),
             routing.mode)
    return 0


def cmd_swa_average(args: argparse.Namespace) -> int:
    snaps = [swa.load_snapshot(p) for p in args.snapshots]
    avg = swa.average_snapshots(snaps)
    if str(args.out).endswith(".json"):
        swa.save_snapshot_json(avg, args.out)
    else:
        swa.save_snapshot(avg, args.out)
    log.info("averaged %d snapshots (%d tensors) -> %s", len(snaps), len(avg.tensors), args.out)
    return 0


def cmd_swa_schedule(args: argparse.Namespace) -> int:
    ns = _resolve(args, SCHEDULE_DEFAULTS)
    values = swa.cyclic_lr_schedule(ns.start, ns.end, ns.steps, ns.cycles)
    doc = json.dumps(
        {
            "lr_start": ns.start,
            "lr_end": ns.end,
            "steps_per_cycle": ns.steps,
            "cycles": ns.cycles,
            "values": values,
        }
    )
    if ns.out:
        Path(ns.out).write_text(doc)
        log.info("wrote %d-step schedule -> %s", len(values), ns.out)
    else:
        print(doc)
    return 0


def cmd_evaluate(args: argparse.Namespace) -> int:
    ns = _resolve(args, EVAL_DEFAULTS)
    dataset = coco.parse_dataset(ns.gt)
    dets = coco.parse_results(ns.results, dataset)
    params = cocoeval.EvalParams(iou_kind=ns.iou, max_dets_per_image=ns.max_dets)
    rep = cocoeval.evaluate_map(dataset, dets, params, jobs=ns.jobs)
    print(report.format_table(rep, dataset))
    if ns.out:
        report.write_json(rep, dataset, ns.out)
    if ns.report_dir:
        paths = report.write_report_bundle(rep, dataset, ns.report_dir)
        log.info("report bundle: %s", ", ".join(str(p) for p in paths))
    return 0


def cmd_validate(args: argparse.Namespace) -> int:
    dataset = coco.parse_dataset(args.dataset)
    print(
        f"dataset OK: {len(dataset.images)} images, {len(dataset.categories)} categories, "
        f"{len(dataset.annotations)} annotations"
    )
    if args.results:
        dets = coco.parse_results(args.results, dataset)
        print(f"results OK: {len(dets)} detections")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="segkit",
        description="Instance-segmentation pipeline toolkit: augmentation, "
        "Soft-NMS, TTA fusion, ensembling, SWA averaging, AP evaluation.",
    )
    _add_version(parser)
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("augment", help="geometric + copy-paste dataset augmentation")
    p.add_argument("--dataset", required=True, help="input COCO dataset JSON")
    p.add_argument("--out", required=True, help="output dataset JSON")
    p.add_argument("--images", help="directory of input PNGs (enables pixel mode)")
    p.add_argument("--out-images", help="directory for augmented PNGs")
    p.add_argument("--seed", type=int, help="base RNG seed")
    p.add_argument("--short-min", type=int, help="min target short side")
    p.add_argument("--short-max", type=int, help="max target short side")
    p.add_argument("--long-cap", type=int, help="long side cap")
    p.add_argument("--crop-width", type=int)
    p.add_argument("--crop-height", type=int)
    p.add_argument("--hflip-prob", type=float)
    p.add_argument("--paste-min", type=int, help="min pasted instances per image")
    p.add_argument("--paste-max", type=int, help="max pasted instances per image")
    p.add_argument("--min-remaining-area", type=int)
    p.add_argument("--paste", action=argparse.BooleanOptionalAction,
                   help="enable/disable copy-paste")
    p.add_argument("--jobs", type=int)
    _add_config(p)
    _add_version(p)
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("nms", help="soft non-maximum suppression over a results file")
    p.add_argument("input", help="detections JSON")
    p.add_argument("output", help="suppressed detections JSON")
    p.add_argument("--dataset", help="optional dataset JSON for strict validation")
    _add_nms_flags(p)
    _add_config(p)
    _add_version(p)
    p.set_defaults(func=cmd_nms)

    p = sub.add_parser("tta-merge", help="fuse original and flipped-image detections")
    p.add_argument("--original", required=True, help="detections on original images")
    p.add_argument("--flipped", required=True, help="detections made on flipped images")
    p.add_argument("--widths", help="JSON map image_id -> width")
    p.add_argument("--dataset", help="dataset JSON (supplies widths and validation)")
    p.add_argument("--out", required=True)
    _add_nms_flags(p)
    _add_config(p)
    _add_version(p)
    p.set_defaults(func=cmd_tta_merge)

    p = sub.add_parser("ensemble", help="integrate two models' results per category")
    p.add_argument("--a", required=True, help="source A results JSON")
    p.add_argument("--b", required=True, help="source B results JSON")
    p.add_argument("--dataset", required=True, help="dataset JSON (resolves category names)")
    p.add_argument("--route", type=_route_spec,
                   help='routing like "default=A,cane=B" (names, not ids)')
    p.add_argument("--routing-config", help="JSON routing table file")
    p.add_argument("--mode", choices=ensemble.MODES)
    p.add_argument("--out", required=True)
    _add_nms_flags(p)
    _add_config(p)
    _add_version(p)
    p.set_defaults(func=cmd_ensemble)

    p = sub.add_parser("swa-average", help="element-wise mean of weight snapshots")
    p.add_argument("snapshots", nargs="+", help="snapshot dirs or JSON files")
    p.add_argument("--out", required=True, help="output dir (or .json file)")
    _add_version(p)
    p.set_defaults(func=cmd_swa_average)

    p = sub.add_parser("swa-schedule", help="cyclic linear fine-tune LR schedule")
    p.add_argument("--start", type=float, help=f"cycle start LR (default {SWA_ADAMW_LR})")
    p.add_argument("--end", type=float, help="cycle end LR")
    p.add_argument("--steps", type=int, help="steps per cycle")
    p.add_argument("--cycles", type=int, help="number of cycles (one snapshot per cycle)")
    p.add_argument("--out", help="output JSON (stdout when omitted)")
    _add_config(p)
    _add_version(p)
    p.set_defaults(func=cmd_swa_schedule)

    p = sub.add_parser("evaluate", help="COCO-style AP@[0.50:0.95] evaluation")
    p.add_argument("--gt", required=True, help="ground-truth dataset JSON")
    p.add_argument("--results", required=True, help="detections JSON")
    p.add_argument("--iou", choices=("mask", "bbox"))
    p.add_argument("--max-dets", type=int)
    p.add_argument("--out", help="machine-readable JSON report path")
    p.add_argument("--report-dir", help="write JSON + CSV + figures here")
    p.add_argument("--jobs", type=int)
    _add_config(p)
    _add_version(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("validate", help="check a dataset (and optional results) file")
    p.add_argument("--dataset", required=True)
    p.add_argument("--results")
    _add_version(p)
    p.set_defaults(func=cmd_validate)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(stream=sys.stderr, level=logging.INFO, format="%(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except SegkitError as e:
        log.error("%s", e)
        return 1


if __name__ == "__main__":
    sys.exit(main())
