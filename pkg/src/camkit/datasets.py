"""Ground-truth annotations and evaluation-collection scanning.

Collections follow the layout ``root/<stem>.bundle/`` for tensor bundles with
a sibling ``root/<stem>.mask.png`` (8-bit indexed, pixel value = class index,
255 = ignore) or ``root/<stem>.boxes.json``
(``[{"class": int, "box": [x0, y0, x1, y1]}]``).
"""

from __future__ import annotations

import enum
import json
import random
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import AnnotationError, FormatError, MissingComponent

IGNORE_INDEX = 255


class AnnotationKind(enum.Enum):
    SEG_MASK = "mask"
    BBOXES = "boxes"


@dataclass(frozen=True)
class Box:
    class_index: int
    x0: int
    y0: int
    x1: int
    y1: int

    def contains(self, row: int, col: int) -> bool:
        return self.x0 <= col < self.x1 and self.y0 <= row < self.y1


@dataclass(frozen=True)
class Annotation:
    kind: AnnotationKind
    mask: np.ndarray | None = None
    boxes: tuple[Box, ...] = ()

    def classes(self) -> list[int]:
        """Distinct annotated class indexes, background/ignore excluded."""
        if self.kind is AnnotationKind.SEG_MASK:
            present = np.unique(self.mask)
            return [int(c) for c in present if c not in (0, IGNORE_INDEX)]
        return sorted({b.class_index for b in self.boxes})

    def contains_class(self, class_index: int) -> bool:
        if self.kind is AnnotationKind.SEG_MASK:
            return bool(np.any(self.mask == class_index))
        return any(b.class_index == class_index for b in self.boxes)


def _validate_boxes(boxes: list[Box], image_size=None) -> None:
    for b in boxes:
        if b.class_index < 0:
            raise AnnotationError(f"box class index {b.class_index} is negative")
        if b.x0 >= b.x1 or b.y0 >= b.y1:
            raise AnnotationError(f"degenerate box ({b.x0},{b.y0},{b.x1},{b.y1})")
        if b.x0 < 0 or b.y0 < 0:
            raise AnnotationError(f"box ({b.x0},{b.y0},{b.x1},{b.y1}) has negative corner")
        if image_size is not None:
            h, w = image_size
            if b.x1 > w or b.y1 > h:
                raise AnnotationError(
                    f"box ({b.x0},{b.y0},{b.x1},{b.y1}) exceeds image bounds {w}x{h}"
                )


def load_annotation(path, kind: AnnotationKind, image_size=None) -> Annotation:
    """Load and validate one annotation file.

    ``image_size`` (H, W), when given, enables the bounds checks that need
    the image dimensions.
    """
    p = Path(path)
    if not p.is_file():
        raise MissingComponent(f"annotation file missing: {p}")
    if kind is AnnotationKind.SEG_MASK:
        try:
            with Image.open(p) as img:
                if img.mode not in ("P", "L"):
                    raise AnnotationError(f"{p}: mask must be 8-bit indexed, got mode {img.mode}")
                mask = np.asarray(img, dtype=np.uint8)
        except (OSError, SyntaxError) as exc:
            raise FormatError(f"{p}: unreadable PNG: {exc}") from exc
        if image_size is not None and mask.shape != tuple(image_size):
            raise AnnotationError(f"{p}: mask dims {mask.shape} differ from image {tuple(image_size)}")
        return Annotation(kind=kind, mask=mask)

    try:
        with open(p, "r", encoding="utf-8") as fh:
            entries = json.load(fh)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{p}: invalid JSON: {exc}") from exc
    if not isinstance(entries, list):
        raise FormatError(f"{p}: boxes file must hold a JSON list")
    boxes = []
    for entry in entries:
        try:
            x0, y0, x1, y1 = (int(v) for v in entry["box"])
            boxes.append(Box(class_index=int(entry["class"]), x0=x0, y0=y0, x1=x1, y1=y1))
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"{p}: malformed box entry {entry!r}") from exc
    _validate_boxes(boxes, image_size)
    return Annotation(kind=kind, boxes=tuple(boxes))


@dataclass(frozen=True)
class EvalItem:
    """A bundle plus its annotation and the class the metrics target."""

    stem: str
    bundle_path: Path
    annotation: Annotation
    target_class: int

    def __post_init__(self):
        if not self.annotation.contains_class(self.target_class):
            raise AnnotationError(
                f"{self.stem}: annotation does not contain target class {self.target_class}"
            )


@dataclass
class CollectionScan:
    items: list[EvalItem]
    warnings: list[str] = field(default_factory=list)


def _majority_class(annotation: Annotation) -> int | None:
    """Most frequent annotated class; ties broken toward the smaller index."""
    if annotation.kind is AnnotationKind.SEG_MASK:
        values, counts = np.unique(annotation.mask, return_counts=True)
        keep = [(int(c), int(n)) for c, n in zip(values, counts) if c not in (0, IGNORE_INDEX)]
        if not keep:
            return None
        return max(keep, key=lambda cn: (cn[1], -cn[0]))[0]
    if not annotation.boxes:
        return None
    counts: dict[int, int] = {}
    for b in annotation.boxes:
        counts[b.class_index] = counts.get(b.class_index, 0) + 1
    return max(counts.items(), key=lambda cn: (cn[1], -cn[0]))[0]


def scan_collection(root, subsample: int | None = None, seed: int = 0) -> CollectionScan:
    """Enumerate ``<stem>.bundle`` dirs with matching annotations.

    Items come back in lexicographic stem order. Bundles without an
    annotation (or with an empty one) are skipped with a warning record.
    ``subsample`` keeps a seeded random subset of the given size, order
    preserved; identical root + seed always yield the identical selection.
    """
    rootp = Path(root)
    if not rootp.is_dir():
        raise MissingComponent(f"collection root missing: {rootp}")
    items: list[EvalItem] = []
    warnings: list[str] = []
    for bundle_dir in sorted(rootp.glob("*.bundle")):
        stem = bundle_dir.name[: -len(".bundle")]
        mask_path = rootp / f"{stem}.mask.png"
        boxes_path = rootp / f"{stem}.boxes.json"
        if mask_path.is_file():
            annotation = load_annotation(mask_path, AnnotationKind.SEG_MASK)
        elif boxes_path.is_file():
            annotation = load_annotation(boxes_path, AnnotationKind.BBOXES)
        else:
            warnings.append(f"{stem}: no annotation found, skipped")
            continue
        target = _majority_class(annotation)
        if target is None:
            warnings.append(f"{stem}: annotation has no foreground class, skipped")
            continue
        items.append(
            EvalItem(stem=stem, bundle_path=bundle_dir, annotation=annotation, target_class=target)
        )
    if subsample is not None and subsample < len(items):
        chosen = sorted(random.Random(seed).sample(range(len(items)), subsample))
        items = [items[i] for i in chosen]
    return CollectionScan(items=items, warnings=warnings)
