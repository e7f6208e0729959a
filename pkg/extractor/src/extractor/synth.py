"""Seeded synthetic shape corpus for desk-scale end-to-end checks.

Images contain colored geometric shapes on a noisy background; the class of
a shape is its color+shape combination. Two-shape images with distinct
classes make the corpus class-discriminative: a saliency method must single
out the target instance, not merely "a shape". Masks are known exactly by
construction, so pointing/Dice/IoU need no human annotation.

Annotation label space: shape class ``c`` is stored as mask value ``c + 1``
(0 stays background). Model label space is the raw class id.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
from PIL import Image

from .hooks import extract_to_bundle
from .models import tiny_resnet

CLASS_COUNT = 6
IMAGE_SIZE = 64
# Classes are six hues arranged in three NEAR-HUE pairs (0,1), (2,3), (4,5).
# Within a pair the hues are close enough that coarse color features respond
# to both, while the exact hue still separates the classes: discriminating
# the pair requires genuinely class-specific, location-resolved evidence.
_COLORS = np.array(
    [
        [0.95, 0.15, 0.15],  # red
        [0.95, 0.45, 0.15],  # red-orange
        [0.15, 0.85, 0.20],  # green
        [0.15, 0.85, 0.55],  # green-teal
        [0.25, 0.35, 0.95],  # blue
        [0.60, 0.35, 0.95],  # blue-violet
    ],
    dtype=np.float32,
)
_SHAPES = ("square",) * 6


def confusable_pair(class_id: int) -> int:
    """The near-hue sibling of a class."""
    return class_id ^ 1

PREPROCESSING = {
    "resize": [IMAGE_SIZE, IMAGE_SIZE],
    "mean": [0.5, 0.5, 0.5],
    "std": [0.5, 0.5, 0.5],
}


def _shape_pixels(shape: str, center, size: int, grid_h: int, grid_w: int) -> np.ndarray:
    cy, cx = center
    ys, xs = np.mgrid[0:grid_h, 0:grid_w]
    dy, dx = ys - cy, xs - cx
    if shape == "square":
        return (np.abs(dy) <= size) & (np.abs(dx) <= size)
    if shape == "circle":
        return dy * dy + dx * dx <= size * size
    # Upright triangle: width shrinks linearly toward the top vertex.
    frac = (dy + size) / (2.0 * size)
    return (np.abs(dy) <= size) & (np.abs(dx) <= frac * size)


def gen_image(rng, class_ids, sizes=None):
    """Render shapes for ``class_ids`` (drawn in order, no overlap).

    Returns (image float32 (3, H, W) in [0, 1], mask uint8 (H, W) with
    values class_id + 1).
    """
    h = w = IMAGE_SIZE
    image = rng.uniform(0.05, 0.30, size=(h, w, 3)).astype(np.float32)
    mask = np.zeros((h, w), dtype=np.uint8)
    taken = np.zeros((h, w), dtype=bool)
    for slot, class_id in enumerate(class_ids):
        size = int(sizes[slot]) if sizes is not None else int(rng.integers(7, 13))
        for _ in range(200):
            cy = int(rng.integers(size + 1, h - size - 1))
            cx = int(rng.integers(size + 1, w - size - 1))
            pixels = _shape_pixels(_SHAPES[class_id], (cy, cx), size, h, w)
            if not (pixels & taken).any():
                break
        else:
            continue  # no free spot; extremely rare with these sizes
        shade = float(rng.uniform(0.85, 1.0))
        image[pixels] = _COLORS[class_id] * shade
        mask[pixels] = class_id + 1
        taken |= pixels
    noise = rng.normal(0.0, 0.02, size=image.shape).astype(np.float32)
    return np.clip(image + noise, 0.0, 1.0).transpose(2, 0, 1), mask


def normalize(image01: np.ndarray) -> np.ndarray:
    return ((image01 - 0.5) / 0.5).astype(np.float32)


def _augment(rng, image01: np.ndarray) -> np.ndarray:
    """Mild brightness scaling plus small cutouts, so the soft-masked and
    zone-ablated images the metrics produce stay in-distribution."""
    out = image01 * float(rng.uniform(0.5, 1.0))
    for _ in range(int(rng.integers(0, 3))):
        ch = int(rng.integers(4, 11))
        cw = int(rng.integers(4, 11))
        r = int(rng.integers(0, IMAGE_SIZE - ch))
        c = int(rng.integers(0, IMAGE_SIZE - cw))
        out[:, r : r + ch, c : c + cw] = 0.0
    return out


def make_training_batch(rng, n: int):
    """Single-label scenes: exactly one shape per image, augmented."""
    xs = np.empty((n, 3, IMAGE_SIZE, IMAGE_SIZE), dtype=np.float32)
    ys = np.zeros(n, dtype=np.int64)
    for i in range(n):
        class_id = int(rng.integers(0, CLASS_COUNT))
        image01, _ = gen_image(rng, (class_id,))
        xs[i] = normalize(_augment(rng, image01))
        ys[i] = class_id
    return torch.from_numpy(xs), torch.from_numpy(ys)


def train_model(seed: int = 0, n_train: int = 1920, epochs: int = 4, width: int = 16):
    """Train the small residual classifier on single-shape scenes."""
    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)
    model = tiny_resnet(num_classes=CLASS_COUNT, width=width)
    optim = torch.optim.Adam(model.parameters(), lr=3e-3)
    loss_fn = nn.CrossEntropyLoss()
    xs, ys = make_training_batch(rng, n_train)
    batch = 64
    model.train()
    for _ in range(epochs):
        perm = torch.randperm(n_train)
        for start in range(0, n_train, batch):
            idx = perm[start : start + batch]
            optim.zero_grad()
            loss = loss_fn(model(xs[idx]), ys[idx])
            loss.backward()
            optim.step()
    model.eval()
    return model


def eval_accuracy(model, rng, n: int = 128) -> float:
    xs, ys = make_training_batch(rng, n)
    with torch.no_grad():
        pred = model(xs).argmax(dim=1)
    return float((pred == ys).float().mean().item())


def _dilate(mask: np.ndarray, radius: int) -> np.ndarray:
    out = mask.copy()
    for dr in range(-radius, radius + 1):
        for dc in range(-radius, radius + 1):
            shifted = np.zeros_like(mask)
            src = mask[
                max(0, -dr) : mask.shape[0] - max(0, dr),
                max(0, -dc) : mask.shape[1] - max(0, dc),
            ]
            shifted[
                max(0, dr) : mask.shape[0] - max(0, -dr),
                max(0, dc) : mask.shape[1] - max(0, -dc),
            ] = src
            out |= shifted
    return out


def build_eval_collection(
    model,
    out_root,
    n_items: int = 60,
    seed: int = 123,
    layer_name: str = "block2",
):
    """Multi-instance eval scenes: a larger same-color distractor plus one
    differently-colored bystander are drawn before the (smaller) target, and
    only the target shape is labeled in the mask (dilated by 2 px, a
    box-style tolerance)."""
    out = Path(out_root)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    produced = 0
    while produced < n_items:
        target = int(rng.integers(0, CLASS_COUNT))
        distractor = confusable_pair(target)
        others = [c for c in range(CLASS_COUNT) if c // 2 != target // 2]
        bystander = int(others[int(rng.integers(0, len(others)))])
        sizes = (int(rng.integers(10, 13)), int(rng.integers(9, 12)), int(rng.integers(9, 12)))
        image01, full_mask = gen_image(
            rng, (distractor, bystander, int(target)), sizes=sizes
        )
        if not np.any(full_mask == target + 1):
            continue  # the target found no free spot; draw a new scene
        stem = f"case{produced:03d}"
        produced += 1
        region = _dilate(full_mask == target + 1, radius=2)
        target_mask = np.where(region, target + 1, 0).astype(np.uint8)
        Image.fromarray(target_mask, mode="L").save(out / f"{stem}.mask.png")
        extract_to_bundle(
            model,
            layer_name,
            normalize(image01),
            out / f"{stem}.bundle",
            model_id="tiny-resnet",
            preprocessing=PREPROCESSING,
            class_index=int(target),
        )
    return out
