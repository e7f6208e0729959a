"""Argparse fronts for the three one-shot scripts."""

from __future__ import annotations

import argparse
import sys

from .errors import ExtractorError
from .export import export_graph
from .hooks import ExtractorConfig, extract
from .voc import convert_voc


def _add_model_args(parser):
    parser.add_argument("--model", required=True, help="model id (toy, tiny-resnet, resnet50, vgg16, ...)")
    parser.add_argument("--layer", default=None, help="dotted layer path; defaults per architecture")
    parser.add_argument("--weights", default=None, help="optional state-dict path")
    parser.add_argument("--resize", type=int, nargs=2, default=(224, 224), metavar=("H", "W"))
    parser.add_argument("--mean", type=float, nargs=3, default=(0.485, 0.456, 0.406))
    parser.add_argument("--std", type=float, nargs=3, default=(0.229, 0.224, 0.225))
    parser.add_argument("--num-classes", type=int, default=None, help="builtin models only")


def _config(args, class_index=None) -> ExtractorConfig:
    return ExtractorConfig(
        model_id=args.model,
        layer_name=args.layer,
        class_index=class_index,
        resize=tuple(args.resize),
        mean=tuple(args.mean),
        std=tuple(args.std),
        weights_path=args.weights,
        num_classes=args.num_classes,
    )


def extract_main(argv=None) -> int:
    parser = argparse.ArgumentParser(description="extract one image into a tensor bundle")
    _add_model_args(parser)
    parser.add_argument("image")
    parser.add_argument("--class-index", type=int, default=None, help="default: top-1")
    parser.add_argument("--out", default="bundles")
    args = parser.parse_args(argv)
    try:
        path = extract(_config(args, args.class_index), args.image, args.out)
    except ExtractorError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(path)
    return 0


def export_main(argv=None) -> int:
    parser = argparse.ArgumentParser(description="export the model as a portable graph")
    _add_model_args(parser)
    parser.add_argument("--out", default="model.onnx")
    args = parser.parse_args(argv)
    try:
        path = export_graph(_config(args), args.out)
    except ExtractorError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(path)
    return 0


def convert_main(argv=None) -> int:
    parser = argparse.ArgumentParser(description="convert a VOC tree into a collection")
    _add_model_args(parser)
    parser.add_argument("voc_root")
    parser.add_argument("--split", default="val")
    parser.add_argument("--limit", type=int, default=None)
    parser.add_argument("--out", default="collection")
    args = parser.parse_args(argv)
    try:
        result = convert_voc(
            args.voc_root, args.out, _config(args), split=args.split, limit=args.limit
        )
    except ExtractorError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    for warning in result.warnings:
        print(f"warning: {warning}", file=sys.stderr)
    print(f"converted {len(result.converted)} images into {args.out}")
    return 0
