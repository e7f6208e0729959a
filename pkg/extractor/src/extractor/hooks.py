"""Capture feature maps and class-logit gradients at a chosen layer.

One forward pass records the hooked layer's output; backpropagating the
selected pre-softmax class logit yields the gradient of that logit with
respect to the recorded feature stack. Both stacks land in a bundle
directory together with the input tensor and logits.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
from PIL import Image, UnidentifiedImageError

from .bundles import write_bundle
from .errors import ConfigError, IoError
from .models import DEFAULT_LAYERS, build_model

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)


@dataclass
class ExtractorConfig:
    model_id: str
    layer_name: str | None = None
    class_index: int | None = None  # None selects the top-1 class
    resize: tuple[int, int] = (224, 224)
    mean: tuple[float, float, float] = IMAGENET_MEAN
    std: tuple[float, float, float] = IMAGENET_STD
    weights_path: str | None = None
    num_classes: int | None = None  # builtins only

    def resolved_layer(self) -> str:
        name = self.layer_name or DEFAULT_LAYERS.get(self.model_id)
        if not name:
            raise ConfigError(f"no layer_name given and no default for {self.model_id!r}")
        return name

    def preprocessing(self) -> dict:
        return {"resize": list(self.resize), "mean": list(self.mean), "std": list(self.std)}


def load_model(config: ExtractorConfig) -> nn.Module:
    model = build_model(config.model_id, config.num_classes)
    if config.weights_path:
        try:
            state = torch.load(config.weights_path, map_location="cpu", weights_only=True)
        except OSError as exc:
            raise IoError(f"cannot read weights {config.weights_path}: {exc}") from exc
        model.load_state_dict(state)
    model.eval()
    return model


def resolve_layer(model: nn.Module, dotted: str) -> nn.Module:
    node: nn.Module = model
    for part in dotted.split("."):
        children = dict(node.named_children())
        if part not in children:
            raise ConfigError(f"layer {dotted!r} not found (missing component {part!r})")
        node = children[part]
    return node


def preprocess_file(path, config: ExtractorConfig) -> np.ndarray:
    """Decode, resize, normalize: returns (3, H, W) float32."""
    try:
        with Image.open(path) as img:
            rgb = img.convert("RGB").resize(
                (config.resize[1], config.resize[0]), Image.BILINEAR
            )
    except (UnidentifiedImageError, OSError, SyntaxError) as exc:
        raise IoError(f"cannot decode image {path}: {exc}") from exc
    arr = np.asarray(rgb, dtype=np.float32) / 255.0
    arr = (arr - np.asarray(config.mean, dtype=np.float32)) / np.asarray(
        config.std, dtype=np.float32
    )
    return np.ascontiguousarray(arr.transpose(2, 0, 1))


def extract_tensors(
    model: nn.Module, layer: nn.Module, image: np.ndarray, class_index: int | None = None
) -> dict:
    """Run one forward + one backward pass, returning the captured stacks."""
    captured: dict = {}

    def keep_output(_module, _inputs, output):
        output.retain_grad()
        captured["features"] = output

    handle = layer.register_forward_hook(keep_output)
    try:
        x = torch.from_numpy(np.asarray(image, dtype=np.float32))[None]
        x.requires_grad_(True)
        model.zero_grad(set_to_none=True)
        logits = model(x)
        if logits.ndim != 2 or logits.shape[0] != 1:
            raise ConfigError(f"model output shape {tuple(logits.shape)} is not (1, C)")
        n_classes = logits.shape[1]
        if class_index is None:
            class_index = int(logits.argmax(dim=1).item())
        elif not 0 <= class_index < n_classes:
            raise ConfigError(f"class_index {class_index} out of range for {n_classes} classes")
        if "features" not in captured:
            raise ConfigError("hooked layer did not run during the forward pass")
        logits[0, class_index].backward()
    finally:
        handle.remove()

    feats = captured["features"]
    if feats.grad is None:
        raise ConfigError("no gradient reached the hooked layer")
    return {
        "features": feats.detach()[0].numpy().astype(np.float32),
        "gradients": feats.grad.detach()[0].numpy().astype(np.float32),
        "class_scores": logits.detach()[0].numpy().astype(np.float32),
        "class_index": class_index,
    }


def extract_to_bundle(
    model: nn.Module,
    layer_name: str,
    image: np.ndarray,
    bundle_dir,
    *,
    model_id: str,
    preprocessing: dict,
    class_index: int | None = None,
) -> Path:
    layer = resolve_layer(model, layer_name)
    tensors = extract_tensors(model, layer, image, class_index)
    return write_bundle(
        bundle_dir,
        image=image,
        features=tensors["features"],
        gradients=tensors["gradients"],
        class_scores=tensors["class_scores"],
        class_index=tensors["class_index"],
        layer_name=layer_name,
        model_id=model_id,
        preprocessing=preprocessing,
    )


def extract(config: ExtractorConfig, image_path, out_dir) -> Path:
    """One-shot extraction: image file in, bundle directory out."""
    model = load_model(config)
    image = preprocess_file(image_path, config)
    stem = Path(image_path).stem
    return extract_to_bundle(
        model,
        config.resolved_layer(),
        image,
        Path(out_dir) / f"{stem}.bundle",
        model_id=config.model_id,
        preprocessing=config.preprocessing(),
        class_index=config.class_index,
    )
