"""segkit_adapter: export glue from DL-framework artifacts to segkit files.

Two conversion scripts, no metric or geometry logic:

* ``python -m segkit_adapter.checkpoint IN OUT_DIR`` - torch checkpoint to
  the snapshot directory format (manifest.json + weights.bin, float64).
* ``python -m segkit_adapter.results IN OUT`` - per-image detection dumps to
  the flat COCO-style results JSON the toolkit parses.

The heavy imports live in the submodules so converting results does not
require torch.
"""

__version__ = "0.1.0"


class AdapterError(Exception):
    """Input cannot be converted (unreadable file, malformed records)."""
