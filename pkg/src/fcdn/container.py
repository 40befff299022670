"""Two-part on-disk container: a UTF-8 JSON manifest plus a raw float32 blob.

Datasets and checkpoints both use this layout. ``<stem>.json`` holds the
manifest and ``<stem>.f32`` holds little-endian IEEE-754 single-precision
values with no header.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import FormatError

BLOB_DTYPE = np.dtype("<f4")


def container_paths(path: str | Path) -> tuple[Path, Path]:
    """Resolve ``path`` to the (manifest, blob) file pair.

    Accepts the stem, either member of the pair, or a directory (in which
    case the pair is ``<dir>/<dir name>.json`` / ``.f32``).
    """
    p = Path(path)
    if p.is_dir():
        p = p / p.name
    elif p.suffix in (".json", ".f32"):
        p = p.with_suffix("")
    return p.with_name(p.name + ".json"), p.with_name(p.name + ".f32")


def write_container(path: str | Path, manifest: dict, blob: np.ndarray) -> tuple[Path, Path]:
    json_path, blob_path = container_paths(path)
    if not json_path.parent.is_dir():
        raise OSError(f"output directory does not exist: {json_path.parent}")
    text = json.dumps(manifest, indent=1, ensure_ascii=False)
    json_path.write_text(text + "\n", encoding="utf-8")
    np.ascontiguousarray(blob, dtype=BLOB_DTYPE).tofile(blob_path)
    return json_path, blob_path


def read_container(path: str | Path, magic: str) -> tuple[dict, np.ndarray]:
    json_path, blob_path = container_paths(path)
    try:
        manifest = json.loads(json_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"manifest is not valid JSON: {exc}") from exc
    if not isinstance(manifest, dict) or manifest.get("magic") != magic:
        raise FormatError(f"magic mismatch: expected {magic!r}")
    blob = np.fromfile(blob_path, dtype=BLOB_DTYPE)
    return manifest, blob
