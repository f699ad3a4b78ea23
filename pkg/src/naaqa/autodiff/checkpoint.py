"""Checkpoint = manifest JSON + little-endian float32 blob in manifest order."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, arrays: dict, meta: dict, trainable: dict | None = None) -> Path:
    """Write ``<path>.json`` and ``<path>.bin``. ``arrays`` maps name -> ndarray (ordered)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    entries, offset = [], 0
    for name, arr in arrays.items():
        n = int(np.prod(arr.shape))
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset,
                        "trainable": bool(trainable.get(name, True)) if trainable else True})
        offset += n
    manifest = {"format": "naaqa-ckpt-1", "dtype": "float32-le", "n_values": offset,
                "tensors": entries, **meta}
    blob = b"".join(np.ascontiguousarray(a, dtype="<f4").tobytes() for a in arrays.values())
    path.with_suffix(".bin").write_bytes(blob)
    path.with_suffix(".json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return path.with_suffix(".json")


def load_checkpoint(path) -> tuple:
    """Return (manifest dict, {name: float32 array})."""
    path = Path(path)
    mpath, bpath = path.with_suffix(".json"), path.with_suffix(".bin")
    if not mpath.exists() or not bpath.exists():
        raise CheckpointError(f"{path}: missing manifest or blob")
    manifest = json.loads(mpath.read_text())
    flat = np.frombuffer(bpath.read_bytes(), dtype="<f4")
    if flat.size != manifest["n_values"]:
        raise CheckpointError(f"{bpath}: {flat.size} values, manifest says {manifest['n_values']}")
    arrays = {}
    for e in manifest["tensors"]:
        n = int(np.prod(e["shape"]))
        arrays[e["name"]] = flat[e["offset"]:e["offset"] + n].reshape(e["shape"]).astype(np.float32)
    return manifest, arrays
