"""On-disk extraction bundles: strict NPY v1.0 tensors plus a JSON manifest.

A bundle is a directory holding ``manifest.json`` and one ``.npy`` file per
tensor. Only little-endian float32, C-order, NPY version 1.0 is accepted;
anything else is rejected at load time so downstream numeric code never sees
malformed data.
"""

from __future__ import annotations

import ast
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    FormatError,
    IoError,
    MissingComponent,
    NonFiniteData,
    ShapeError,
)

_MAGIC = b"\x93NUMPY"
_MANIFEST = "manifest.json"
_TENSOR_NAMES = ("image", "features", "gradients", "class_scores")


def write_npy(path: Path | str, array: np.ndarray) -> None:
    """Write ``array`` as NPY v1.0, little-endian float32, C order."""
    arr = np.ascontiguousarray(array, dtype="<f4")
    shape = "(" + ", ".join(str(d) for d in arr.shape) + ("," if arr.ndim == 1 else "") + ")"
    header = "{'descr': '<f4', 'fortran_order': False, 'shape': %s, }" % shape
    # Pad so that magic + version + length field + header is a multiple of 64.
    unpadded = len(_MAGIC) + 2 + 2 + len(header) + 1
    header = header + " " * (-unpadded % 64) + "\n"
    try:
        with open(path, "wb") as fh:
            fh.write(_MAGIC)
            fh.write(b"\x01\x00")
            fh.write(struct.pack("<H", len(header)))
            fh.write(header.encode("latin1"))
            fh.write(arr.tobytes(order="C"))
    except OSError as exc:
        raise IoError(f"cannot write tensor file {path}: {exc}") from exc


def read_npy(path: Path | str) -> np.ndarray:
    """Read an NPY file, accepting only v1.0 / ``<f4`` / C order."""
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except FileNotFoundError as exc:
        raise MissingComponent(f"tensor file missing: {path}") from exc
    except OSError as exc:
        raise IoError(f"cannot read tensor file {path}: {exc}") from exc

    if blob[:6] != _MAGIC:
        raise FormatError(f"{path}: not an NPY file (bad magic)")
    if len(blob) < 10:
        raise FormatError(f"{path}: truncated NPY header")
    major, minor = blob[6], blob[7]
    if (major, minor) != (1, 0):
        raise FormatError(f"{path}: NPY version {major}.{minor} not supported (need 1.0)")
    (header_len,) = struct.unpack("<H", blob[8:10])
    header_end = 10 + header_len
    if len(blob) < header_end:
        raise FormatError(f"{path}: truncated NPY header")
    try:
        header = ast.literal_eval(blob[10:header_end].decode("latin1"))
    except (ValueError, SyntaxError) as exc:
        raise FormatError(f"{path}: unparseable NPY header") from exc
    if not isinstance(header, dict):
        raise FormatError(f"{path}: NPY header is not a dict")
    if header.get("descr") != "<f4":
        raise FormatError(f"{path}: dtype {header.get('descr')!r} rejected (need '<f4')")
    if header.get("fortran_order") is not False:
        raise FormatError(f"{path}: Fortran-order tensors rejected")
    shape = header.get("shape")
    if not isinstance(shape, tuple) or not all(isinstance(d, int) and d >= 0 for d in shape):
        raise FormatError(f"{path}: bad shape entry {shape!r}")

    count = int(np.prod(shape, dtype=np.int64)) if shape else 1
    payload = blob[header_end:]
    if len(payload) != 4 * count:
        raise FormatError(
            f"{path}: payload is {len(payload)} bytes, expected {4 * count} for shape {shape}"
        )
    return np.frombuffer(payload, dtype="<f4").reshape(shape)


@dataclass(frozen=True)
class ExtractionBundle:
    """Per-image package of tensors and metadata produced by an extractor.

    ``image`` is the preprocessed network input (3 x H x W), ``features`` and
    ``gradients`` are the (K x h x w) stacks captured at ``layer_name``, and
    ``class_scores`` holds the pre-softmax logits. ``class_index`` names the
    class the gradients were taken for.
    """

    image: np.ndarray
    features: np.ndarray
    gradients: np.ndarray
    class_scores: np.ndarray
    class_index: int
    layer_name: str = ""
    model_id: str = ""
    preprocessing: dict = field(default_factory=dict)

    def tensors(self) -> dict[str, np.ndarray]:
        return {
            "image": self.image,
            "features": self.features,
            "gradients": self.gradients,
            "class_scores": self.class_scores,
        }


def validate_bundle(bundle: ExtractionBundle) -> None:
    """Check every bundle invariant, raising the specific error on violation."""
    for name, arr in bundle.tensors().items():
        if not np.all(np.isfinite(arr)):
            raise NonFiniteData(f"tensor '{name}' contains NaN/Inf values")
    img, feats, grads, scores = (
        bundle.image,
        bundle.features,
        bundle.gradients,
        bundle.class_scores,
    )
    if img.ndim != 3 or img.shape[0] != 3:
        raise ShapeError(f"image must be 3xHxW, got {img.shape}")
    if feats.ndim != 3:
        raise ShapeError(f"features must be KxhxW, got {feats.shape}")
    if feats.shape != grads.shape:
        raise ShapeError(f"features {feats.shape} and gradients {grads.shape} differ")
    if min(feats.shape) < 1:
        raise ShapeError(f"feature stack has a zero dimension: {feats.shape}")
    if scores.ndim != 1 or scores.shape[0] < 1:
        raise ShapeError(f"class_scores must be a nonempty vector, got {scores.shape}")
    if not 0 <= bundle.class_index < scores.shape[0]:
        raise FormatError(
            f"class_index {bundle.class_index} out of range for {scores.shape[0]} classes"
        )
    if img.shape[1] < feats.shape[1] or img.shape[2] < feats.shape[2]:
        raise ShapeError(
            f"image spatial dims {img.shape[1:]} smaller than feature dims {feats.shape[1:]}"
        )


def save_bundle(bundle: ExtractionBundle, path: Path | str) -> None:
    """Write a validated bundle to ``path`` (created if needed)."""
    validate_bundle(bundle)
    root = Path(path)
    try:
        root.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoError(f"cannot create bundle directory {root}: {exc}") from exc

    tensors_entry = {}
    for name, arr in bundle.tensors().items():
        fname = f"{name}.npy"
        write_npy(root / fname, arr)
        tensors_entry[name] = {"file": fname, "shape": list(arr.shape)}
    manifest = {
        "version": 1,
        "model_id": bundle.model_id,
        "layer_name": bundle.layer_name,
        "class_index": int(bundle.class_index),
        "tensors": tensors_entry,
        "preprocessing": bundle.preprocessing,
    }
    try:
        with open(root / _MANIFEST, "w", encoding="utf-8") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")
    except OSError as exc:
        raise IoError(f"cannot write manifest in {root}: {exc}") from exc


def load_bundle(path: Path | str) -> ExtractionBundle:
    """Load and fully validate the bundle stored at ``path``."""
    root = Path(path)
    manifest_path = root / _MANIFEST
    if not manifest_path.is_file():
        raise MissingComponent(f"no {_MANIFEST} in {root}")
    try:
        with open(manifest_path, "r", encoding="utf-8") as fh:
            manifest = json.load(fh)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{manifest_path}: invalid JSON: {exc}") from exc
    except OSError as exc:
        raise IoError(f"cannot read {manifest_path}: {exc}") from exc

    if manifest.get("version") != 1:
        raise FormatError(f"{manifest_path}: unsupported manifest version {manifest.get('version')!r}")
    tensors_entry = manifest.get("tensors")
    if not isinstance(tensors_entry, dict):
        raise FormatError(f"{manifest_path}: missing 'tensors' table")

    arrays: dict[str, np.ndarray] = {}
    for name in _TENSOR_NAMES:
        entry = tensors_entry.get(name)
        if entry is None:
            raise MissingComponent(f"{manifest_path}: tensor '{name}' not declared")
        arr = read_npy(root / entry["file"])
        declared = tuple(entry.get("shape", ()))
        if declared != arr.shape:
            raise ShapeError(
                f"{root}: manifest declares {name} shape {declared}, file has {arr.shape}"
            )
        arrays[name] = arr

    class_index = manifest.get("class_index")
    if not isinstance(class_index, int):
        raise FormatError(f"{manifest_path}: class_index must be an integer")
    bundle = ExtractionBundle(
        image=arrays["image"],
        features=arrays["features"],
        gradients=arrays["gradients"],
        class_scores=arrays["class_scores"],
        class_index=class_index,
        layer_name=manifest.get("layer_name", ""),
        model_id=manifest.get("model_id", ""),
        preprocessing=manifest.get("preprocessing", {}),
    )
    validate_bundle(bundle)
    return bundle
