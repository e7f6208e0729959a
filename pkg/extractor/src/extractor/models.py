"""Built-in test architectures plus torchvision lookup by name."""

from __future__ import annotations

from collections import OrderedDict

import torch.nn as nn
from torchvision.models.resnet import BasicBlock

from .errors import ConfigError


def toy_convnet(num_classes: int = 4, width: int = 4) -> nn.Sequential:
    """Two-conv toy classifier; hook target is ``conv2`` (or ``relu2``)."""
    return nn.Sequential(
        OrderedDict(
            [
                ("conv1", nn.Conv2d(3, width, 3, padding=1)),
                ("relu1", nn.ReLU()),
                ("conv2", nn.Conv2d(width, width + 2, 3, padding=1)),
                ("relu2", nn.ReLU()),
                ("pool", nn.AdaptiveAvgPool2d(1)),
                ("flatten", nn.Flatten(1)),
                ("fc", nn.Linear(width + 2, num_classes)),
            ]
        )
    )


def _block(cin: int, cout: int, stride: int) -> BasicBlock:
    downsample = None
    if stride != 1 or cin != cout:
        downsample = nn.Sequential(
            nn.Conv2d(cin, cout, 1, stride=stride, bias=False),
            nn.BatchNorm2d(cout),
        )
    return BasicBlock(cin, cout, stride=stride, downsample=downsample)


def tiny_resnet(num_classes: int = 6, width: int = 16) -> nn.Sequential:
    """Three-stage residual classifier; hook target is ``block3``."""
    return nn.Sequential(
        OrderedDict(
            [
                ("stem_conv", nn.Conv2d(3, width, 3, padding=1, bias=False)),
                ("stem_bn", nn.BatchNorm2d(width)),
                ("stem_relu", nn.ReLU()),
                ("block1", _block(width, width, 1)),
                ("block2", _block(width, 2 * width, 2)),
                ("block3", _block(2 * width, 4 * width, 2)),
                ("head_pool", nn.AdaptiveAvgPool2d(1)),
                ("head_flatten", nn.Flatten(1)),
                ("fc", nn.Linear(4 * width, num_classes)),
            ]
        )
    )


BUILTIN_MODELS = {
    "toy": toy_convnet,
    "tiny-resnet": tiny_resnet,
}

DEFAULT_LAYERS = {
    "toy": "relu2",
    "tiny-resnet": "block3",
    "resnet18": "layer4",
    "resnet50": "layer4",
    "vgg16": "features.29",
}


def build_model(model_id: str, num_classes: int | None = None) -> nn.Module:
    if model_id in BUILTIN_MODELS:
        factory = BUILTIN_MODELS[model_id]
        model = factory(num_classes) if num_classes else factory()
        return model
    try:
        import torchvision.models as tvm

        model = tvm.get_model(model_id, weights=None)
    except (ValueError, KeyError) as exc:
        raise ConfigError(f"unknown model_id {model_id!r}") from exc
    return model
