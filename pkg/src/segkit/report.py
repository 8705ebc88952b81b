"""Evaluation-report rendering: text table, JSON, CSV and figure files.

The figure path uses matplotlib's Agg backend so it works headless; figures
land next to the delimited output inside the report directory.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

from .coco import Dataset
from .cocoeval import EvalReport

JSON_NAME = "report.json"
CSV_NAME = "per_category_ap.csv"
AP_FIGURE_NAME = "ap_per_category.png"
PR_FIGURE_NAME = "pr_curves.png"


def _category_rows(report: EvalReport, dataset: Dataset):
    for cat in dataset.categories:
        yield cat, report.per_category[cat.id]


def format_table(report: EvalReport, dataset: Dataset) -> str:
    name_width = max([len(c.name) for c in dataset.categories] + [len("category")])
    lines = []
    header = f"{'category':<{name_width}}  {'num_gt':>6}  {'num_det':>7}  {'AP@0.50:0.95':>12}"
    lines.append(header)
    lines.append("-" * len(header))
    for cat, res in _category_rows(report, dataset):
        ap = f"{res.ap:.4f}" if res.present else "absent"
        lines.append(
            f"{cat.name:<{name_width}}  {res.num_gt:>6}  {res.num_det:>7}  {ap:>12}"
        )
    lines.append("-" * len(header))
    lines.append(f"{'mean AP':<{name_width}}  {'':>6}  {'':>7}  {report.mean_ap:>12.4f}")
    return "\n".join(lines)


def report_to_json(report: EvalReport, dataset: Dataset) -> dict:
    return {
        "mean_ap": report.mean_ap,
        "iou_kind": report.params.iou_kind,
        "iou_thresholds": list(report.params.iou_thresholds),
        "max_dets_per_image": report.params.max_dets_per_image,
        "categories": [
            {
                "id": cat.id,
                "name": cat.name,
                "present": res.present,
                "num_gt": res.num_gt,
                "num_det": res.num_det,
                "ap": res.ap,
                "ap_per_threshold": res.ap_per_threshold,
            }
            for cat, res in _category_rows(report, dataset)
        ],
    }


def write_json(report: EvalReport, dataset: Dataset, path) -> None:
    Path(path).write_text(json.dumps(report_to_json(report, dataset), indent=2))


def write_csv(report: EvalReport, dataset: Dataset, path) -> None:
    thresholds = report.params.iou_thresholds
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["category_id", "name", "present", "num_gt", "num_det", "ap"]
            + [f"ap_{t:.2f}" for t in thresholds]
        )
        for cat, res in _category_rows(report, dataset):
            aps = res.ap_per_threshold or [""] * len(thresholds)
            writer.writerow(
                [cat.id, cat.name, int(res.present), res.num_gt, res.num_det,
                 res.ap if res.present else ""]
                + list(aps)
            )
        writer.writerow(["", "mean", "", "", "", report.mean_ap] + [""] * len(thresholds))


def render_figures(report: EvalReport, dataset: Dataset, out_dir) -> list[Path]:
    """Write the per-category AP bar chart and PR-envelope curves as PNGs."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []

    names, aps = [], []
    for cat, res in _category_rows(report, dataset):
        if res.present:
            names.append(cat.name)
            aps.append(res.ap)
    fig, ax = plt.subplots(figsize=(7, max(2.5, 0.45 * len(names) + 1.5)))
    ax.barh(range(len(names)), aps, color="#3b76af")
    ax.set_yticks(range(len(names)))
    ax.set_yticklabels(names)
    ax.invert_yaxis()
    ax.axvline(report.mean_ap, color="#c0392b", linestyle="--",
               label=f"mean AP = {report.mean_ap:.4f}")
    ax.set_xlabel("AP@0.50:0.95")
    ax.set_xlim(0, 1)
    ax.legend(loc="lower right")
    fig.tight_layout()
    path = out / AP_FIGURE_NAME
    fig.savefig(path, dpi=120)
    plt.close(fig)
    paths.append(path)

    thresholds = list(report.params.iou_thresholds)
    shown = [t for t in (0.5, 0.75) if t in thresholds] or thresholds[:1]
    recall = list(report.params.recall_points)
    fig, axes = plt.subplots(1, len(shown), figsize=(5.5 * len(shown), 4), squeeze=False)
    for ax, t in zip(axes[0], shown):
        ti = thresholds.index(t)
        for cat, res in _category_rows(report, dataset):
            if res.precision_curves is None:
                continue
            ax.plot(recall, res.precision_curves[ti], label=cat.name)
        ax.set_title(f"precision envelope, IoU >= {t:.2f}")
        ax.set_xlabel("recall")
        ax.set_ylabel("precision")
        ax.set_xlim(0, 1)
        ax.set_ylim(0, 1.05)
        ax.legend(fontsize="small")
    fig.tight_layout()
    path = out / PR_FIGURE_NAME
    fig.savefig(path, dpi=120)
    plt.close(fig)
    paths.append(path)
    return paths


def write_report_bundle(report: EvalReport, dataset: Dataset, out_dir) -> list[Path]:
    """JSON + CSV + figures under one directory; returns written paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    json_path = out / JSON_NAME
    csv_path = out / CSV_NAME
    write_json(report, dataset, json_path)
    write_csv(report, dataset, csv_path)
    return [json_path, csv_path] + render_figures(report, dataset, out)
