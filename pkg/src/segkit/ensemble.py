"""Two-model result integration with per-category routing.

``route`` mode substitutes whole categories: each category's output comes
from exactly one source, so its per-category AP equals that source's.
``merge`` mode concatenates both sources per category and re-runs Soft-NMS.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .coco import Dataset, Detection
from .errors import ValidationError
from .softnms import NmsParams, soft_nms_grouped

SOURCES = ("A", "B")
MODES = ("route", "merge")


@dataclass(frozen=True)
class RoutingTable:
    default_source: str = "A"
    overrides: dict[int, str] = field(default_factory=dict)  # category_id -> source
    mode: str = "route"

    def __post_init__(self) -> None:
        if self.default_source not in SOURCES:
            raise ValidationError(f"unknown default source {self.default_source!r}")
        if self.mode not in MODES:
            raise ValidationError(f"unknown integration mode {self.mode!r}")
        for cid, src in self.overrides.items():
            if src not in SOURCES:
                raise ValidationError(f"unknown source {src!r} for category {cid}")

    def source_for(self, category_id: int) -> str:
        return self.overrides.get(category_id, self.default_source)


def routing_from_names(
    spec: dict[str, str], dataset: Dataset, mode: str = "route"
) -> RoutingTable:
    """Build a table from a name-keyed mapping like
    ``{"default": "A", "cane": "B"}``; names resolve against the dataset."""
    default = spec.get("default", "A")
    overrides = {}
    for name, src in spec.items():
        if name == "default":
            continue
        if name not in dataset.category_by_name:
            raise ValidationError(f"routing names unknown category {name!r}")
        overrides[dataset.category_by_name[name].id] = src
    return RoutingTable(default_source=default, overrides=overrides, mode=mode)


def integrate_by_category(
    a: list[Detection],
    b: list[Detection],
    routing: RoutingTable,
    nms_params: NmsParams | None = None,
    valid_categories: set[int] | None = None,
) -> list[Detection]:
    """Combine two result sets according to the routing table.

    ``valid_categories`` (e.g. the dataset's category ids) makes overrides
    for unknown categories an error rather than silently dead routes.
    """
    if valid_categories is not None:
        for cid in routing.overrides:
            if cid not in valid_categories:
                raise ValidationError(f"routing override for unknown category {cid}")
    if routing.mode == "merge":
        return soft_nms_grouped(list(a) + list(b), nms_params or NmsParams())
    out = [d for d in a if routing.source_for(d.category_id) == "A"]
    out.extend(d for d in b if routing.source_for(d.category_id) == "B")
    return out
