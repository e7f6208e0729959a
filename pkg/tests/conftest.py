"""Shared builders for synthetic bundles, annotations, and stub scorers."""

import json
from pathlib import Path

import numpy as np
import pytest
from PIL import Image

from camkit import ExtractionBundle, image_digest, save_bundle

FIXTURE_DIR = Path(__file__).parent / "fixtures"


def make_bundle(
    rng,
    image_hw=(16, 16),
    feat_khw=(4, 4, 4),
    classes=5,
    class_index=2,
    model_id="toy",
    layer_name="conv_last",
    preprocessing=None,
) -> ExtractionBundle:
    h, w = image_hw
    image = rng.uniform(-1.5, 1.5, size=(3, h, w)).astype(np.float32)
    features = rng.uniform(-2.0, 2.0, size=feat_khw).astype(np.float32)
    gradients = rng.uniform(-1.0, 1.0, size=feat_khw).astype(np.float32)
    scores = rng.uniform(-3.0, 3.0, size=classes).astype(np.float32)
    return ExtractionBundle(
        image=image,
        features=features,
        gradients=gradients,
        class_scores=scores,
        class_index=class_index,
        layer_name=layer_name,
        model_id=model_id,
        preprocessing=preprocessing or {"resize": [h, w], "mean": [0.0, 0.0, 0.0], "std": [1.0, 1.0, 1.0]},
    )


def write_mask(path, shape, rect, class_index, ignore_border=False):
    """Rectangle mask: rect = (r0, c0, r1, c1), half-open."""
    mask = np.zeros(shape, dtype=np.uint8)
    r0, c0, r1, c1 = rect
    mask[r0:r1, c0:c1] = class_index
    if ignore_border:
        mask[0, :] = 255
    img = Image.fromarray(mask, mode="L").convert("P")
    img.save(path)
    return mask


def write_boxes(path, boxes):
    entries = [{"class": c, "box": [x0, y0, x1, y1]} for (c, x0, y0, x1, y1) in boxes]
    Path(path).write_text(json.dumps(entries), encoding="utf-8")


def write_stub(path, table=None, default=None):
    payload = dict(table or {})
    if default is not None:
        payload["default"] = list(default)
    Path(path).write_text(json.dumps(payload), encoding="utf-8")


def make_collection(root: Path, n_items=3, seed=0, classes=5, boxes_for=()):
    """Bundle + annotation collection plus a stub scorer covering it."""
    root.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    table = {}
    stems = []
    for idx in range(n_items):
        stem = f"img{idx:03d}"
        stems.append(stem)
        bundle = make_bundle(rng, classes=classes, class_index=idx % classes)
        save_bundle(bundle, root / f"{stem}.bundle")
        table[image_digest(bundle.image)] = [float(v) for v in bundle.class_scores]
        target = 1 + (idx % 3)
        if stem in boxes_for:
            write_boxes(root / f"{stem}.boxes.json", [(target, 2, 2, 10, 10)])
        else:
            write_mask(root / f"{stem}.mask.png", (16, 16), (3, 3, 9, 9), target)
    stub_path = root / "stub.json"
    default = np.linspace(-1.0, 1.0, classes).tolist()
    write_stub(stub_path, table=table, default=default)
    return stems, stub_path


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
