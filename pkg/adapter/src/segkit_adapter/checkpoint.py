"""Export a torch checkpoint as a weight-snapshot directory.

Output layout (the format ``segkit swa-average`` consumes): ``manifest.json``
listing tensor names/shapes/byte offsets plus ``weights.bin`` holding the
values as little-endian float64 in manifest order. Exports of the same
checkpoint are byte-identical.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
import torch

from . import AdapterError

log = logging.getLogger("segkit_adapter")

MANIFEST_NAME = "manifest.json"
WEIGHTS_NAME = "weights.bin"
SNAPSHOT_FORMAT = "segkit-snapshot-v1"


def load_state_mapping(path) -> dict:
    """Flat name -> tensor mapping from a checkpoint file. Accepts a raw
    state dict or one nested under a ``state_dict``/``model`` key."""
    try:
        obj = torch.load(path, map_location="cpu")
    except (OSError, RuntimeError, ValueError) as e:
        raise AdapterError(f"cannot read checkpoint {path}: {e}") from e
    if isinstance(obj, dict):
        for key in ("state_dict", "model"):
            if key in obj and isinstance(obj[key], dict):
                obj = obj[key]
                break
    if not isinstance(obj, dict):
        raise AdapterError(
            f"checkpoint {path} does not contain a name -> tensor mapping"
        )
    return obj


def export_checkpoint(checkpoint_path, out_dir) -> None:
    state = load_state_mapping(checkpoint_path)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    blobs = []
    offset = 0
    skipped = []
    for name, value in state.items():
        if not isinstance(value, torch.Tensor):
            skipped.append(str(name))
            continue
        array = np.asarray(
            value.detach().cpu().to(torch.float64).numpy(), dtype="<f8", order="C"
        )
        blob = array.tobytes()
        entries.append(
            {"name": str(name), "shape": list(array.shape), "dtype": "float64",
             "offset": offset}
        )
        offset += len(blob)
        blobs.append(blob)
    if skipped:
        log.warning("skipped %d non-tensor entries: %s", len(skipped), ", ".join(skipped))
    if not entries:
        log.warning("checkpoint holds no tensors; writing an empty snapshot")
    manifest = {
        "format": SNAPSHOT_FORMAT,
        "byte_order": "little",
        "tensors": entries,
        "meta": {},
    }
    (out / MANIFEST_NAME).write_text(json.dumps(manifest, indent=2))
    (out / WEIGHTS_NAME).write_bytes(b"".join(blobs))


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="python -m segkit_adapter.checkpoint",
        description="Export a torch checkpoint to a weight-snapshot directory.",
    )
    parser.add_argument("checkpoint", help="torch checkpoint file (.pt/.pth)")
    parser.add_argument("out_dir", help="snapshot output directory")
    args = parser.parse_args(argv)
    logging.basicConfig(stream=sys.stderr, level=logging.INFO, format="%(message)s")
    try:
        export_checkpoint(args.checkpoint, args.out_dir)
    except AdapterError as e:
        log.error("%s", e)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
