"""Forward-only scoring of (possibly masked) images.

Two scorer implementations share one interface: ``OnnxScorer`` executes a
portable classifier graph, ``StubScorer`` replays logits from a JSON lookup
table keyed by an image digest, which keeps the whole test suite hermetic.
Both are deterministic: identical input bytes yield identical logits.
"""

from __future__ import annotations

import abc
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import onnxgraph
from .errors import FormatError, ModelLoadError, RangeError, ScoringError, ShapeError

STUB_DEFAULT_KEY = "default"


def softmax(logits: np.ndarray) -> np.ndarray:
    """Numerically stable softmax over a 1-D logit vector."""
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


def image_digest(image: np.ndarray) -> str:
    """SHA-256 over the little-endian float32 C-order bytes of a tensor."""
    arr = np.ascontiguousarray(image, dtype="<f4")
    return hashlib.sha256(arr.tobytes()).hexdigest()


@dataclass(frozen=True)
class ClassScore:
    """One forward pass: pre-softmax logits and their softmax probabilities."""

    logits: np.ndarray
    probabilities: np.ndarray

    def probability(self, class_index: int) -> float:
        if not 0 <= class_index < self.probabilities.shape[0]:
            raise RangeError(
                f"class index {class_index} out of range for {self.probabilities.shape[0]} classes"
            )
        return float(self.probabilities[class_index])


class Scorer(abc.ABC):
    """Deterministic forward-only model interface."""

    input_spec: tuple[int, int, int]
    num_classes: int | None

    @abc.abstractmethod
    def logits(self, image: np.ndarray) -> np.ndarray:
        """Return the length-C logit vector for one 3xHxW image."""


class StubScorer(Scorer):
    """Lookup-table scorer: image digest -> logits, with an optional default.

    The table format is a JSON object mapping hex digests (see
    :func:`image_digest`) to logit vectors; the reserved key ``"default"``
    supplies logits for any image not present in the table.
    """

    def __init__(self, table: dict[str, list[float]], input_spec=None):
        default = table.get(STUB_DEFAULT_KEY)
        self._default = None if default is None else np.asarray(default, dtype=np.float64)
        self._table = {
            k: np.asarray(v, dtype=np.float64)
            for k, v in table.items()
            if k != STUB_DEFAULT_KEY
        }
        lengths = {len(v) for v in self._table.values()}
        if self._default is not None:
            lengths.add(len(self._default))
        if len(lengths) > 1:
            raise FormatError(f"stub scorer mixes logit lengths {sorted(lengths)}")
        if not lengths:
            raise FormatError("stub scorer defines no logits at all")
        self.num_classes = lengths.pop()
        self.input_spec = tuple(input_spec) if input_spec is not None else None

    def logits(self, image: np.ndarray) -> np.ndarray:
        key = image_digest(image)
        hit = self._table.get(key)
        if hit is None:
            hit = self._default
        if hit is None:
            raise ScoringError(f"stub scorer has no entry for digest {key[:12]}...")
        return hit.copy()


class OnnxScorer(Scorer):
    """Scorer backed by the self-contained ONNX graph executor."""

    def __init__(self, path, input_spec: tuple[int, int, int]):
        self.graph = onnxgraph.load_graph(path)
        if self.graph.input_name != "input":
            raise ModelLoadError(
                f"{path}: graph input is named '{self.graph.input_name}', contract requires 'input'"
            )
        if self.graph.output_name != "logits":
            raise ModelLoadError(
                f"{path}: graph output is named '{self.graph.output_name}', contract requires 'logits'"
            )
        self.input_spec = tuple(int(d) for d in input_spec)
        declared = self.graph.input_shape
        # Trailing dims of the graph input must match the spec where static.
        if len(declared) >= 3:
            for want, got in zip(self.input_spec, declared[-3:]):
                if got is not None and got != 0 and got != want:
                    raise ModelLoadError(
                        f"{path}: graph input shape {declared} incompatible with spec {self.input_spec}"
                    )
        out_shape = self.graph.output_shape
        self.num_classes = (
            int(out_shape[-1]) if out_shape and out_shape[-1] not in (None, 0) else None
        )

    def logits(self, image: np.ndarray) -> np.ndarray:
        batch = np.asarray(image, dtype=np.float32)[None, ...]
        out = onnxgraph.run_graph(self.graph, batch)
        vec = np.asarray(out, dtype=np.float64).reshape(-1)
        if self.num_classes is None:
            self.num_classes = vec.shape[0]
        return vec


def load_stub_scorer(path, input_spec=None) -> StubScorer:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            table = json.load(fh)
    except FileNotFoundError as exc:
        raise ModelLoadError(f"stub scorer file missing: {path}") from exc
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(table, dict):
        raise FormatError(f"{path}: stub scorer must be a JSON object")
    return StubScorer(table, input_spec=input_spec)


def load_scorer(model_path, input_spec: tuple[int, int, int]) -> Scorer:
    """Load a scorer from a ``.onnx`` graph or a ``.json`` stub table."""
    path = Path(model_path)
    if path.suffix == ".json":
        return load_stub_scorer(path, input_spec=input_spec)
    return OnnxScorer(path, input_spec)


def score(scorer: Scorer, image: np.ndarray) -> ClassScore:
    """Run one forward pass and return logits plus softmax probabilities."""
    img = np.asarray(image)
    if scorer.input_spec is not None and tuple(img.shape) != tuple(scorer.input_spec):
        raise ShapeError(f"image shape {img.shape} does not match spec {scorer.input_spec}")
    logits = np.asarray(scorer.logits(img), dtype=np.float64)
    if logits.ndim != 1:
        raise ScoringError(f"scorer returned shape {logits.shape}, expected a vector")
    return ClassScore(logits=logits, probabilities=softmax(logits))
