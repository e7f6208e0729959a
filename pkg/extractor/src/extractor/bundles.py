"""Write extraction bundles in the portable on-disk format.

The format contract: a directory with ``manifest.json`` plus one NPY v1.0
file (little-endian float32, C order) per tensor. This module only writes;
the consumer side lives in the core toolkit and is reached exclusively
through these files.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import IoError


def write_npy_v1(path: Path, array: np.ndarray) -> None:
    arr = np.ascontiguousarray(array, dtype="<f4")
    try:
        with open(path, "wb") as fh:
            np.lib.format.write_array(fh, arr, version=(1, 0))
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def write_bundle(
    out_dir: Path | str,
    *,
    image: np.ndarray,
    features: np.ndarray,
    gradients: np.ndarray,
    class_scores: np.ndarray,
    class_index: int,
    layer_name: str,
    model_id: str,
    preprocessing: dict,
) -> Path:
    root = Path(out_dir)
    try:
        root.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoError(f"cannot create {root}: {exc}") from exc

    tensors = {
        "image": np.asarray(image, dtype=np.float32),
        "features": np.asarray(features, dtype=np.float32),
        "gradients": np.asarray(gradients, dtype=np.float32),
        "class_scores": np.asarray(class_scores, dtype=np.float32),
    }
    entry = {}
    for name, arr in tensors.items():
        write_npy_v1(root / f"{name}.npy", arr)
        entry[name] = {"file": f"{name}.npy", "shape": list(arr.shape)}
    manifest = {
        "version": 1,
        "model_id": model_id,
        "layer_name": layer_name,
        "class_index": int(class_index),
        "tensors": entry,
        "preprocessing": preprocessing,
    }
    try:
        with open(root / "manifest.json", "w", encoding="utf-8") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")
    except OSError as exc:
        raise IoError(f"cannot write manifest in {root}: {exc}") from exc
    return root
