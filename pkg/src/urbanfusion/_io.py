"""Small file helpers shared by every stage: hashing and manifests."""

import hashlib
import json
from pathlib import Path
from typing import Any

import numpy as np


def content_hash(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def array_hash(arr: np.ndarray) -> str:
    arr = np.ascontiguousarray(arr)
    h = hashlib.sha256()
    h.update(str(arr.dtype).encode())
    h.update(str(arr.shape).encode())
    h.update(arr.tobytes())
    return h.hexdigest()


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return _finite_or_none(float(obj))
    if isinstance(obj, float):
        return _finite_or_none(obj)
    if isinstance(obj, Path):
        return str(obj)
    return obj


def _finite_or_none(x: float):
    return x if np.isfinite(x) else None


def write_json(path, payload: Any) -> None:
    """Write deterministic JSON (sorted keys, NaN/Inf mapped to null)."""
    text = json.dumps(_jsonable(payload), indent=2, sort_keys=True, allow_nan=False)
    Path(path).write_text(text + "\n")


def read_json(path) -> Any:
    return json.loads(Path(path).read_text())


def write_manifest(path, outputs: dict[str, Path], **fields) -> dict:
    """Record row counts, drop tallies etc. alongside the hash of every output file."""
    manifest = dict(fields)
    manifest["files"] = {
        name: {"path": Path(p).name, "sha256": content_hash(p)} for name, p in sorted(outputs.items())
    }
    write_json(path, manifest)
    return manifest
