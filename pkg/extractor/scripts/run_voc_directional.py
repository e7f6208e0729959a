#!/usr/bin/env python3
"""Directional method comparison on real VOC data.

Converts a seeded subset of a local VOC tree into a collection with a
ResNet-style model, exports the graph, runs the consumer's ``evaluate``
with both methods, and prints the three orderings (context-zone drop,
pointing-game margin, salience-zone drop). Requires a local VOCdevkit tree
and a state-dict for the chosen model; nothing is downloaded.

Example:
    python scripts/run_voc_directional.py /data/VOCdevkit/VOC2012 \
        --model resnet50 --weights resnet50.pt --limit 60 --out voc_run
"""

import argparse
import json
import subprocess
import sys
from pathlib import Path

from extractor.export import export_graph
from extractor.hooks import ExtractorConfig
from extractor.voc import convert_voc


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("voc_root")
    parser.add_argument("--model", default="resnet50")
    parser.add_argument("--weights", default=None)
    parser.add_argument("--layer", default=None)
    parser.add_argument("--split", default="val")
    parser.add_argument("--limit", type=int, default=60)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", default="voc_directional")
    args = parser.parse_args(argv)

    out = Path(args.out)
    config = ExtractorConfig(
        model_id=args.model, layer_name=args.layer, weights_path=args.weights
    )
    result = convert_voc(args.voc_root, out / "coll", config, split=args.split, limit=args.limit)
    for warning in result.warnings:
        print(f"warning: {warning}", file=sys.stderr)
    if len(result.converted) < 50:
        print(f"error: only {len(result.converted)} images converted, need >= 50", file=sys.stderr)
        return 1
    export_graph(config, out / "model.onnx")

    run = {
        "collection": str(out / "coll"),
        "scorer": str(out / "model.onnx"),
        "methods": ["gradcam", "guided"],
        "curves": False,
        "seed": args.seed,
    }
    (out / "run.json").write_text(json.dumps(run, indent=2))
    code = subprocess.call(
        ["camkit", "evaluate", str(out / "run.json"), "--out", str(out / "reports")]
    )
    if code != 0:
        return code

    payload = json.loads((out / "reports" / "report.json").read_text())
    base = payload["methods"]["gradcam"]["aggregates"]
    guided = payload["methods"]["guided"]["aggregates"]
    checks = [
        ("context-zone drop (guided >= baseline)",
         guided["drop_context"], base["drop_context"],
         guided["drop_context"] >= base["drop_context"]),
        ("pointing margin >= 0.05",
         guided["pointing_hit"], base["pointing_hit"],
         guided["pointing_hit"] - base["pointing_hit"] >= 0.05),
        ("salience-zone drop (guided < baseline)",
         guided["drop_salience"], base["drop_salience"],
         guided["drop_salience"] < base["drop_salience"]),
    ]
    failed = 0
    for label, g, b, ok in checks:
        print(f"[{'PASS' if ok else 'FAIL'}] {label}: guided {g:.4f} vs baseline {b:.4f}")
        failed += 0 if ok else 1
    return 1 if failed else 0


if __name__ == "__main__":
    sys.exit(main())
