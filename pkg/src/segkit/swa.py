"""Checkpoint-averaging utilities and the cyclic fine-tune LR schedule.

A weight snapshot is a flat name -> float64 tensor map. On disk it is either
a directory holding ``manifest.json`` plus ``weights.bin`` (little-endian
float64, tensors concatenated in manifest order) or, for small cases, a
single JSON file with inline values. Both forms load to the same object.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ParseError, ValidationError

MANIFEST_NAME = "manifest.json"
WEIGHTS_NAME = "weights.bin"
SNAPSHOT_FORMAT = "segkit-snapshot-v1"


@dataclass
class WeightSnapshot:
    tensors: dict[str, np.ndarray]  # each float64, any shape
    meta: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.tensors = {
            name: np.asarray(values, dtype=np.float64, order="C")
            for name, values in self.tensors.items()
        }


def average_snapshots(snaps: list[WeightSnapshot]) -> WeightSnapshot:
    """Element-wise arithmetic mean of the snapshots.

    All snapshots must agree on tensor names and shapes. Accumulation is
    float64 in the first snapshot's tensor order, summed over snapshots in
    list order, so a given list always averages bit-identically. The mean is
    computed as ``first + mean(deltas from first)``, which limits
    cancellation and makes the mean of identical snapshots exactly that
    snapshot.
    """
    if not snaps:
        raise ValidationError("cannot average an empty snapshot list")
    first = snaps[0]
    names = list(first.tensors)
    for i, snap in enumerate(snaps[1:], start=1):
        if set(snap.tensors) != set(names):
            extra = set(snap.tensors) ^ set(names)
            raise ValidationError(
                f"snapshot {i} tensor names differ from snapshot 0: {sorted(extra)}"
            )
        for name in names:
            if snap.tensors[name].shape != first.tensors[name].shape:
                raise ValidationError(
                    f"tensor {name!r} shape {snap.tensors[name].shape} in snapshot {i} "
                    f"does not match {first.tensors[name].shape}"
                )
    out: dict[str, np.ndarray] = {}
    for name in names:
        base = first.tensors[name]
        acc = np.zeros_like(base)
        for snap in snaps[1:]:
            acc += snap.tensors[name] - base
        out[name] = base + acc / len(snaps)
    return WeightSnapshot(tensors=out, meta={"averaged_snapshots": len(snaps)})


def cyclic_lr_schedule(
    lr_start: float, lr_end: float, steps_per_cycle: int, cycles: int
) -> list[float]:
    """Per-step learning rates: within each cycle decay linearly from
    ``lr_start`` to ``lr_end`` over ``steps_per_cycle`` steps, restarting at
    ``lr_start`` every cycle. One snapshot is intended per cycle end.

    Cycle endpoints are pinned to ``lr_start``/``lr_end`` exactly, so the
    schedule's max and min equal the requested rates bit-for-bit."""
    if steps_per_cycle < 2:
        raise ValidationError("steps_per_cycle must be at least 2")
    if cycles < 1:
        raise ValidationError("cycles must be at least 1")
    if lr_start <= 0:
        raise ValidationError("lr_start must be positive")
    if lr_end < 0:
        raise ValidationError("lr_end must be non-negative")
    if lr_start < lr_end:
        raise ValidationError("lr_start must be >= lr_end")
    last = steps_per_cycle - 1
    cycle = [lr_start]
    cycle += [lr_start - (lr_start - lr_end) * i / last for i in range(1, last)]
    cycle.append(lr_end)
    return cycle * cycles


def save_snapshot(snap: WeightSnapshot, out_dir) -> None:
    """Write the directory form (manifest.json + weights.bin)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    offset = 0
    blobs = []
    for name, values in snap.tensors.items():
        blob = np.ascontiguousarray(values, dtype="<f8").tobytes()
        entries.append(
            {"name": name, "shape": list(values.shape), "dtype": "float64", "offset": offset}
        )
        offset += len(blob)
        blobs.append(blob)
    manifest = {
        "format": SNAPSHOT_FORMAT,
        "byte_order": "little",
        "tensors": entries,
        "meta": snap.meta,
    }
    (out / MANIFEST_NAME).write_text(json.dumps(manifest, indent=2))
    (out / WEIGHTS_NAME).write_bytes(b"".join(blobs))


def save_snapshot_json(snap: WeightSnapshot, path) -> None:
    """Write the single-file JSON form (inline values, desk-scale only)."""
    doc = {
        "format": SNAPSHOT_FORMAT,
        "tensors": [
            {"name": name, "shape": list(values.shape), "values": values.ravel().tolist()}
            for name, values in snap.tensors.items()
        ],
        "meta": snap.meta,
    }
    Path(path).write_text(json.dumps(doc))


def load_snapshot(path) -> WeightSnapshot:
    """Load either on-disk form; directories must hold manifest + weights."""
    p = Path(path)
    if p.is_dir():
        return _load_snapshot_dir(p)
    return _load_snapshot_json(p)


def _load_snapshot_dir(p: Path) -> WeightSnapshot:
    manifest_path = p / MANIFEST_NAME
    if not manifest_path.exists():
        raise ParseError(f"{p}: snapshot directory has no {MANIFEST_NAME}")
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as e:
        raise ParseError(f"{manifest_path}: malformed JSON at byte offset {e.pos}") from e
    raw = (p / WEIGHTS_NAME).read_bytes() if (p / WEIGHTS_NAME).exists() else b""
    tensors: dict[str, np.ndarray] = {}
    for entry in manifest.get("tensors", []):
        name = entry["name"]
        shape = tuple(int(s) for s in entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        offset = int(entry["offset"])
        nbytes = count * 8
        if offset + nbytes > len(raw):
            raise ValidationError(
                f"{p}: tensor {name!r} extends past the end of {WEIGHTS_NAME}"
            )
        values = np.frombuffer(raw, dtype="<f8", count=count, offset=offset)
        tensors[name] = values.reshape(shape).astype(np.float64)
    return WeightSnapshot(tensors=tensors, meta=dict(manifest.get("meta", {})))


def _load_snapshot_json(p: Path) -> WeightSnapshot:
    try:
        doc = json.loads(p.read_text())
    except OSError as e:
        raise ParseError(f"cannot read {p}: {e}") from e
    except json.JSONDecodeError as e:
        raise ParseError(f"{p}: malformed JSON at byte offset {e.pos}") from e
    if not isinstance(doc, dict) or "tensors" not in doc:
        raise ParseError(f"{p}: snapshot JSON must be an object with a 'tensors' list")
    tensors: dict[str, np.ndarray] = {}
    for entry in doc["tensors"]:
        shape = tuple(int(s) for s in entry["shape"])
        values = np.asarray(entry["values"], dtype=np.float64)
        count = int(np.prod(shape)) if shape else 1
        if values.size != count:
            raise ValidationError(
                f"{p}: tensor {entry['name']!r} has {values.size} values, shape needs {count}"
            )
        tensors[entry["name"]] = values.reshape(shape)
    return WeightSnapshot(tensors=tensors, meta=dict(doc.get("meta", {})))
