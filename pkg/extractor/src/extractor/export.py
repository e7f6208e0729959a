"""Convert eval-mode torch classifiers into the portable graph format.

Supported building blocks: Conv2d, BatchNorm2d, ReLU, MaxPool2d, AvgPool2d,
AdaptiveAvgPool2d, Linear, Flatten, Dropout, Sequential containers,
torchvision BasicBlock/Bottleneck, and the ResNet/VGG top-level layouts.
The emitted graph has a single input named ``input`` and a single output
named ``logits``; shapes are tracked during conversion so mismatches fail
here rather than at inference time.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
from torchvision.models.resnet import BasicBlock, Bottleneck, ResNet
from torchvision.models.vgg import VGG

from . import onnx_proto as proto
from .errors import ConfigError, ExportError
from .hooks import ExtractorConfig, load_model

OPSET = 13


def _pair(value) -> tuple[int, int]:
    if isinstance(value, (tuple, list)):
        return int(value[0]), int(value[1])
    return int(value), int(value)


class GraphBuilder:
    """Accumulates nodes/initializers while tracking the activation shape."""

    def __init__(self, input_shape: tuple[int, int, int]):
        self.nodes: list[bytes] = []
        self.initializers: list[bytes] = []
        self.shape: tuple | None = tuple(input_shape)  # (C, H, W) or (features,)
        self._counter = 0

    def fresh(self, hint: str) -> str:
        self._counter += 1
        return f"{hint}_{self._counter}"

    def add_weight(self, hint: str, array: np.ndarray) -> str:
        name = self.fresh(hint)
        self.initializers.append(proto.tensor(name, array))
        return name

    def emit(self, op: str, inputs, output_hint: str, *attrs) -> str:
        out = self.fresh(output_hint)
        self.nodes.append(proto.node(op, inputs, [out], *attrs))
        return out

    # -- shape bookkeeping -------------------------------------------------

    def _spatial(self, what: str) -> tuple[int, int, int]:
        if self.shape is None or len(self.shape) != 3:
            raise ConfigError(f"{what} expects a CxHxW activation, have {self.shape}")
        return self.shape  # type: ignore[return-value]

    @staticmethod
    def _conv_dim(size: int, kernel: int, stride: int, pad: int, dilation: int = 1) -> int:
        out = (size + 2 * pad - dilation * (kernel - 1) - 1) // stride + 1
        if out < 1:
            raise ConfigError(f"spatial dim collapses to {out} (input {size}, kernel {kernel})")
        return out


def convert_module(module: nn.Module, builder: GraphBuilder, x: str) -> str:
    if isinstance(module, nn.Sequential):
        for child in module:
            x = convert_module(child, builder, x)
        return x

    if isinstance(module, nn.Conv2d):
        c, h, w = builder._spatial("Conv2d")
        if module.in_channels != c:
            raise ConfigError(f"Conv2d expects {module.in_channels} channels, activation has {c}")
        if module.padding_mode != "zeros":
            raise ExportError(f"padding mode {module.padding_mode!r} not supported")
        kh, kw = _pair(module.kernel_size)
        sh, sw = _pair(module.stride)
        ph, pw = _pair(module.padding)
        dh, dw = _pair(module.dilation)
        weight = builder.add_weight("conv_w", module.weight.detach().numpy())
        inputs = [x, weight]
        if module.bias is not None:
            inputs.append(builder.add_weight("conv_b", module.bias.detach().numpy()))
        out = builder.emit(
            "Conv",
            inputs,
            "conv",
            proto.attr_ints("kernel_shape", [kh, kw]),
            proto.attr_ints("strides", [sh, sw]),
            proto.attr_ints("pads", [ph, pw, ph, pw]),
            proto.attr_ints("dilations", [dh, dw]),
            proto.attr_int("group", module.groups),
        )
        builder.shape = (
            module.out_channels,
            builder._conv_dim(h, kh, sh, ph, dh),
            builder._conv_dim(w, kw, sw, pw, dw),
        )
        return out

    if isinstance(module, nn.BatchNorm2d):
        if module.training or module.running_mean is None:
            raise ExportError("BatchNorm2d must be in eval mode with running stats")
        builder._spatial("BatchNorm2d")
        scale = builder.add_weight("bn_scale", module.weight.detach().numpy())
        bias = builder.add_weight("bn_bias", module.bias.detach().numpy())
        mean = builder.add_weight("bn_mean", module.running_mean.numpy())
        var = builder.add_weight("bn_var", module.running_var.numpy())
        return builder.emit(
            "BatchNormalization",
            [x, scale, bias, mean, var],
            "bn",
            proto.attr_float("epsilon", float(module.eps)),
        )

    if isinstance(module, (nn.ReLU,)):
        return builder.emit("Relu", [x], "relu")

    if isinstance(module, nn.MaxPool2d):
        c, h, w = builder._spatial("MaxPool2d")
        if module.ceil_mode:
            raise ExportError("MaxPool2d with ceil_mode is not supported")
        if _pair(module.dilation) != (1, 1):
            raise ExportError("dilated MaxPool2d is not supported")
        kh, kw = _pair(module.kernel_size)
        sh, sw = _pair(module.stride or module.kernel_size)
        ph, pw = _pair(module.padding)
        out = builder.emit(
            "MaxPool",
            [x],
            "maxpool",
            proto.attr_ints("kernel_shape", [kh, kw]),
            proto.attr_ints("strides", [sh, sw]),
            proto.attr_ints("pads", [ph, pw, ph, pw]),
        )
        builder.shape = (c, builder._conv_dim(h, kh, sh, ph), builder._conv_dim(w, kw, sw, pw))
        return out

    if isinstance(module, nn.AvgPool2d):
        c, h, w = builder._spatial("AvgPool2d")
        if module.ceil_mode:
            raise ExportError("AvgPool2d with ceil_mode is not supported")
        if _pair(module.padding) != (0, 0):
            raise ExportError("padded AvgPool2d is not supported")
        kh, kw = _pair(module.kernel_size)
        sh, sw = _pair(module.stride or module.kernel_size)
        out = builder.emit(
            "AveragePool",
            [x],
            "avgpool",
            proto.attr_ints("kernel_shape", [kh, kw]),
            proto.attr_ints("strides", [sh, sw]),
        )
        builder.shape = (c, builder._conv_dim(h, kh, sh, 0), builder._conv_dim(w, kw, sw, 0))
        return out

    if isinstance(module, nn.AdaptiveAvgPool2d):
        c, h, w = builder._spatial("AdaptiveAvgPool2d")
        target = module.output_size
        th, tw = _pair(target if target is not None else (h, w))
        if (th, tw) == (1, 1):
            builder.shape = (c, 1, 1)
            return builder.emit("GlobalAveragePool", [x], "gap")
        if (th, tw) == (h, w):
            return x  # identity at this input size
        if h % th == 0 and w % tw == 0:
            kh, kw = h // th, w // tw
            out = builder.emit(
                "AveragePool",
                [x],
                "adaptive_avg",
                proto.attr_ints("kernel_shape", [kh, kw]),
                proto.attr_ints("strides", [kh, kw]),
            )
            builder.shape = (c, th, tw)
            return out
        raise ExportError(
            f"AdaptiveAvgPool2d to {target} from {(h, w)} has no uniform kernel"
        )

    if isinstance(module, nn.Flatten):
        if module.start_dim not in (0, 1):
            raise ExportError("Flatten is only supported from the batch dim")
        shape = builder.shape or ()
        builder.shape = (int(np.prod(shape)),)
        return builder.emit("Flatten", [x], "flat", proto.attr_int("axis", 1))

    if isinstance(module, nn.Linear):
        if builder.shape is None or len(builder.shape) != 1:
            raise ConfigError(f"Linear expects a flat activation, have {builder.shape}")
        if builder.shape[0] != module.in_features:
            raise ConfigError(
                f"Linear expects {module.in_features} features, activation has {builder.shape[0]}"
            )
        weight = builder.add_weight("fc_w", module.weight.detach().numpy())
        inputs = [x, weight]
        if module.bias is not None:
            inputs.append(builder.add_weight("fc_b", module.bias.detach().numpy()))
        builder.shape = (module.out_features,)
        return builder.emit("Gemm", inputs, "gemm", proto.attr_int("transB", 1))

    if isinstance(module, nn.Dropout):
        return x  # identity in eval mode

    if isinstance(module, (BasicBlock, Bottleneck)):
        identity = x
        if isinstance(module, BasicBlock):
            chain = [module.conv1, module.bn1, module.relu, module.conv2, module.bn2]
        else:
            chain = [
                module.conv1,
                module.bn1,
                module.relu,
                module.conv2,
                module.bn2,
                module.relu,
                module.conv3,
                module.bn3,
            ]
        saved_shape = builder.shape
        for child in chain:
            x = convert_module(child, builder, x)
        if module.downsample is not None:
            branch_shape = builder.shape
            builder.shape = saved_shape
            identity = convert_module(module.downsample, builder, identity)
            if builder.shape != branch_shape:
                raise ExportError("residual branches disagree on shape")
        out = builder.fresh("add")
        builder.nodes.append(proto.node("Add", [x, identity], [out]))
        return builder.emit("Relu", [out], "relu")

    if isinstance(module, ResNet):
        for child in (
            module.conv1,
            module.bn1,
            module.relu,
            module.maxpool,
            module.layer1,
            module.layer2,
            module.layer3,
            module.layer4,
            module.avgpool,
            nn.Flatten(1),
            module.fc,
        ):
            x = convert_module(child, builder, x)
        return x

    if isinstance(module, VGG):
        for child in (module.features, module.avgpool, nn.Flatten(1), module.classifier):
            x = convert_module(child, builder, x)
        return x

    raise ExportError(f"module type {type(module).__name__} is not supported for export")


def export_model(
    model: nn.Module, input_shape: tuple[int, int, int], out_path
) -> None:
    """Serialize an eval-mode model to the portable graph file."""
    model.eval()
    builder = GraphBuilder(input_shape)
    with torch.no_grad():
        last = convert_module(model, builder, "input")
    if builder.shape is None or len(builder.shape) != 1:
        raise ExportError(f"exported graph ends with shape {builder.shape}, expected logits")
    # Alias the final value to the contract output name.
    builder.nodes.append(proto.node("Identity", [last], ["logits"]))
    inputs = [proto.value_info("input", (1,) + tuple(input_shape))]
    outputs = [proto.value_info("logits", (1, builder.shape[0]))]
    blob = proto.model(builder.nodes, builder.initializers, inputs, outputs, opset=OPSET)
    Path(out_path).write_bytes(blob)


def export_graph(config: ExtractorConfig, out_path) -> Path:
    """Export the configured model plus a logits consistency record.

    Alongside ``<out>.onnx`` this writes ``<out>.check.image.npy`` (one
    fixture input) and ``<out>.check.json`` holding the logits the source
    framework produced for it, so the consumer can verify its executor.
    """
    model = load_model(config)
    input_shape = (3,) + tuple(config.resize)
    out_path = Path(out_path)
    export_model(model, input_shape, out_path)

    rng = np.random.default_rng(0)
    fixture = rng.uniform(-2.0, 2.0, size=input_shape).astype(np.float32)
    with torch.no_grad():
        logits = model(torch.from_numpy(fixture)[None])[0].numpy()
    image_path = out_path.with_suffix(".check.image.npy")
    with open(image_path, "wb") as fh:
        np.lib.format.write_array(fh, np.ascontiguousarray(fixture, dtype="<f4"), version=(1, 0))
    record = {
        "image": image_path.name,
        "logits": [float(v) for v in logits],
        "model_id": config.model_id,
    }
    out_path.with_suffix(".check.json").write_text(
        json.dumps(record, indent=2) + "\n", encoding="utf-8"
    )
    return out_path
