"""Convert a PASCAL-VOC directory tree into the evaluation-collection layout.

Emits per image: ``<stem>.bundle/`` (extracted tensors), ``<stem>.mask.png``
(class-index pixels, 255 ignore) and ``<stem>.boxes.json``. Malformed
annotations are skipped with a warning record. Note model and annotation
label spaces stay independent: the metric target class is resolved from the
annotation (majority class) at scan time by the consumer.
"""

from __future__ import annotations

import json
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ExtractorError, IoError
from .hooks import ExtractorConfig, extract_to_bundle, load_model, preprocess_file

VOC_CLASSES = (
    "aeroplane", "bicycle", "bird", "boat", "bottle",
    "bus", "car", "cat", "chair", "cow",
    "diningtable", "dog", "horse", "motorbike", "person",
    "pottedplant", "sheep", "sofa", "train", "tvmonitor",
)


@dataclass
class ConversionResult:
    converted: list[str] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)


def parse_voc_boxes(xml_path: Path) -> list[dict]:
    """Objects from a VOC annotation file as collection box entries."""
    root = ET.parse(xml_path).getroot()
    boxes = []
    for obj in root.iter("object"):
        name = obj.findtext("name", "").strip()
        if name not in VOC_CLASSES:
            continue
        bnd = obj.find("bndbox")
        if bnd is None:
            continue
        # VOC coordinates are 1-based inclusive; emit 0-based half-open.
        x0 = int(float(bnd.findtext("xmin"))) - 1
        y0 = int(float(bnd.findtext("ymin"))) - 1
        x1 = int(float(bnd.findtext("xmax")))
        y1 = int(float(bnd.findtext("ymax")))
        boxes.append({"class": VOC_CLASSES.index(name) + 1, "box": [x0, y0, x1, y1]})
    return boxes


def _scale_boxes(boxes: list[dict], src_wh, dst_hw) -> list[dict]:
    sw, sh = src_wh
    dh, dw = dst_hw
    out = []
    for entry in boxes:
        x0, y0, x1, y1 = entry["box"]
        out.append(
            {
                "class": entry["class"],
                "box": [
                    int(np.floor(x0 * dw / sw)),
                    int(np.floor(y0 * dh / sh)),
                    max(int(np.ceil(x1 * dw / sw)), int(np.floor(x0 * dw / sw)) + 1),
                    max(int(np.ceil(y1 * dh / sh)), int(np.floor(y0 * dh / sh)) + 1),
                ],
            }
        )
    return out


def _convert_mask(src: Path, dst: Path, size_hw) -> None:
    with Image.open(src) as img:
        if img.mode not in ("P", "L"):
            raise IoError(f"{src}: expected an indexed mask, got mode {img.mode}")
        # Nearest-neighbor keeps class indexes intact under resizing.
        resized = img.resize((size_hw[1], size_hw[0]), Image.NEAREST)
        arr = np.asarray(resized, dtype=np.uint8)
    Image.fromarray(arr, mode="L").save(dst)


def convert_voc(
    voc_root,
    out_root,
    config: ExtractorConfig,
    split: str = "val",
    limit: int | None = None,
) -> ConversionResult:
    voc = Path(voc_root)
    out = Path(out_root)
    out.mkdir(parents=True, exist_ok=True)
    split_file = voc / "ImageSets" / "Segmentation" / f"{split}.txt"
    if not split_file.is_file():
        raise IoError(f"split list missing: {split_file}")
    stems = [line.strip() for line in split_file.read_text().splitlines() if line.strip()]
    if limit is not None:
        stems = stems[:limit]

    model = load_model(config)
    layer = config.resolved_layer()
    result = ConversionResult()
    for stem in stems:
        jpeg = voc / "JPEGImages" / f"{stem}.jpg"
        mask = voc / "SegmentationClass" / f"{stem}.png"
        xml = voc / "Annotations" / f"{stem}.xml"
        if not jpeg.is_file():
            result.warnings.append(f"{stem}: image missing, skipped")
            continue

        wrote_annotation = False
        if mask.is_file():
            try:
                _convert_mask(mask, out / f"{stem}.mask.png", config.resize)
                wrote_annotation = True
            except (IoError, OSError) as exc:
                result.warnings.append(f"{stem}: bad mask ({exc})")
        if xml.is_file():
            try:
                with Image.open(jpeg) as img:
                    src_wh = img.size
                boxes = _scale_boxes(parse_voc_boxes(xml), src_wh, config.resize)
                if boxes:
                    (out / f"{stem}.boxes.json").write_text(
                        json.dumps(boxes), encoding="utf-8"
                    )
                    wrote_annotation = True
            except (ET.ParseError, ValueError, TypeError, OSError) as exc:
                result.warnings.append(f"{stem}: bad annotation XML ({exc})")
        if not wrote_annotation:
            result.warnings.append(f"{stem}: no usable annotation, skipped")
            continue

        try:
            image = preprocess_file(jpeg, config)
            extract_to_bundle(
                model,
                layer,
                image,
                out / f"{stem}.bundle",
                model_id=config.model_id,
                preprocessing=config.preprocessing(),
                class_index=config.class_index,
            )
        except ExtractorError as exc:
            result.warnings.append(f"{stem}: extraction failed ({exc})")
            continue
        result.converted.append(stem)
    return result
