"""Batch command-line front end: saliency overlays, metric suites, curves.

Exit codes: 0 success, 2 usage or config error (including malformed inputs),
1 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .cam import (
    PostprocessConfig,
    RawSaliency,
    SaliencySource,
    aggregate_features,
    channel_weights,
    gradcam,
    guided_cam,
    postprocess,
)
from .datasets import scan_collection
from .errors import (
    AnnotationError,
    CamKitError,
    ConfigError,
    FormatError,
    MissingComponent,
    ModelLoadError,
    NonFiniteData,
    RangeError,
    ShapeError,
)
from .metrics import (
    METRIC_FIELDS,
    CurveMode,
    EvalConfig,
    evaluate_collection,
    insertion_deletion,
    report_to_csv,
    report_to_dict,
)
from .scoring import load_scorer
from .tensorio import load_bundle, write_npy

_METHODS = {
    "gradcam": SaliencySource.GRADCAM,
    "guided": SaliencySource.GUIDED_CAM,
    "plain": SaliencySource.PLAIN_AGGREGATE,
}
_USAGE_ERRORS = (
    ConfigError,
    FormatError,
    ShapeError,
    NonFiniteData,
    MissingComponent,
    AnnotationError,
    RangeError,
    ModelLoadError,
)
DEFAULT_COLORMAP = "inferno"
DEFAULT_ALPHA = 0.5


def _bundle_stem(bundle_path: Path) -> str:
    name = bundle_path.name
    return name[: -len(".bundle")] if name.endswith(".bundle") else name


def _raw_saliency(bundle, method: SaliencySource) -> RawSaliency:
    if method is SaliencySource.GRADCAM:
        return gradcam(bundle.features, channel_weights(bundle.gradients))
    if method is SaliencySource.GUIDED_CAM:
        return guided_cam(bundle.features, bundle.gradients)
    raw = aggregate_features(bundle.features)
    # Plain aggregation is unclamped by definition; clamp for display only.
    return RawSaliency(values=np.maximum(raw.values, 0.0), source=raw.source)


def _saliency_map(bundle, method, sigma, kernel):
    raw = _raw_saliency(bundle, method)
    target = (int(bundle.image.shape[1]), int(bundle.image.shape[2]))
    cfg = PostprocessConfig(target_size=target, smoothing_sigma=sigma, smoothing_kernel=kernel)
    return postprocess(raw, cfg)


def _display_image(bundle) -> np.ndarray:
    """Undo the recorded normalization for rendering, best effort."""
    img = np.asarray(bundle.image, dtype=np.float64)
    pre = bundle.preprocessing or {}
    mean = pre.get("mean")
    std = pre.get("std")
    if mean is not None and std is not None:
        img = img * np.asarray(std)[:, None, None] + np.asarray(mean)[:, None, None]
    else:
        lo, hi = img.min(), img.max()
        if hi > lo:
            img = (img - lo) / (hi - lo)
    return np.clip(np.transpose(img, (1, 2, 0)), 0.0, 1.0)


def _write_overlay(path: Path, base: np.ndarray, saliency: np.ndarray, method: str, alpha: float):
    from matplotlib import colormaps
    from PIL import Image
    from PIL.PngImagePlugin import PngInfo

    heat = colormaps[DEFAULT_COLORMAP](saliency)[..., :3]
    blend = (1.0 - alpha) * base + alpha * heat
    rgb = (np.clip(blend, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    meta = PngInfo()
    meta.add_text("camkit:method", method)
    meta.add_text("camkit:colormap", DEFAULT_COLORMAP)
    meta.add_text("camkit:alpha", repr(alpha))
    Image.fromarray(rgb).save(path, pnginfo=meta)


def cmd_explain(args) -> int:
    bundle = load_bundle(args.bundle)
    method = _METHODS[args.method]
    sal = _saliency_map(bundle, method, args.smoothing_sigma, args.smoothing_kernel)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    stem = _bundle_stem(Path(args.bundle))
    infix = "" if method is SaliencySource.GUIDED_CAM else f".{args.method}"
    write_npy(out / f"{stem}{infix}.saliency.npy", sal.values.astype(np.float32))
    _write_overlay(
        out / f"{stem}{infix}.overlay.png",
        _display_image(bundle),
        sal.values,
        args.method,
        args.alpha,
    )
    return 0


def _load_run_config(path: Path) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            cfg = json.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file missing: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    for key in ("collection", "scorer"):
        if key not in cfg:
            raise ConfigError(f"{path}: missing required key '{key}'")
    return cfg


def cmd_evaluate(args) -> int:
    run = _load_run_config(Path(args.config))

    def setting(key, default):
        override = getattr(args, key, None)
        if override is not None:
            return override
        return run.get(key, default)

    method_names = run.get("methods", ["guided"])
    if not method_names:
        raise ConfigError("config selects no methods")
    unknown = [m for m in method_names if m not in ("gradcam", "guided")]
    if unknown:
        raise ConfigError(f"evaluate supports methods gradcam/guided, got {unknown}")

    eval_cfg = EvalConfig(
        tau=float(setting("tau", 0.5)),
        steps=int(setting("steps", 100)),
        curves=bool(run.get("curves", True)),
        smoothing_sigma=float(run.get("smoothing_sigma", 1.0)),
        smoothing_kernel=int(run.get("smoothing_kernel", 5)),
        deletion_baseline=run.get("deletion_baseline", "zero"),
        insertion_baseline=run.get("insertion_baseline", "blur"),
        blur_sigma=float(run.get("blur_sigma", 10.0)),
        seed=int(setting("seed", 0)),
    )
    subsample = setting("subsample", None)
    workers = int(setting("workers", 1))
    out = Path(setting("out", "reports"))

    scan = scan_collection(run["collection"], subsample=subsample, seed=eval_cfg.seed)
    for warning in scan.warnings:
        print(f"warning: {warning}", file=sys.stderr)
    if scan.items:
        probe = load_bundle(scan.items[0].bundle_path)
        input_spec = tuple(int(d) for d in probe.image.shape)
    else:
        input_spec = None

    def scorer_factory():
        return load_scorer(run["scorer"], input_spec)

    reports = {}
    for name in method_names:
        reports[name] = evaluate_collection(
            scan.items,
            _METHODS[name],
            scorer_factory(),
            eval_cfg,
            workers=workers,
            scorer_factory=scorer_factory if workers > 1 else None,
        )

    out.mkdir(parents=True, exist_ok=True)
    csv_lines = []
    for name, report in reports.items():
        body = report_to_csv(report).rstrip("\n").split("\n")
        if not csv_lines:
            csv_lines.append("method," + body[0])
        csv_lines.extend(f"{name},{line}" for line in body[1:])
    (out / "report.csv").write_text("\n".join(csv_lines) + "\n", encoding="utf-8")

    settings = {
        "collection": run["collection"],
        "scorer": run["scorer"],
        "methods": list(method_names),
        "tau": eval_cfg.tau,
        "steps": eval_cfg.steps,
        "curves": eval_cfg.curves,
        "smoothing_sigma": eval_cfg.smoothing_sigma,
        "smoothing_kernel": eval_cfg.smoothing_kernel,
        "deletion_baseline": eval_cfg.deletion_baseline,
        "insertion_baseline": eval_cfg.insertion_baseline,
        "blur_sigma": eval_cfg.blur_sigma,
        "seed": eval_cfg.seed,
        "subsample": subsample,
    }
    payload = {
        "settings": settings,
        "warnings": scan.warnings,
        "methods": {name: report_to_dict(report) for name, report in reports.items()},
    }
    with open(out / "report.json", "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")

    if len(method_names) >= 2:
        first, second = method_names[0], method_names[1]
        agg_a = reports[first].aggregates
        agg_b = reports[second].aggregates
        lines = [f"metric,{first},{second},delta"]
        for field in METRIC_FIELDS:
            a, b = agg_a.get(field), agg_b.get(field)
            delta = "" if a is None or b is None else repr(b - a)
            fmt = lambda v: "" if v is None else repr(v)
            lines.append(f"{field},{fmt(a)},{fmt(b)},{delta}")
        (out / "comparison.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return 0


def cmd_curves(args) -> int:
    bundle = load_bundle(args.bundle)
    method = _METHODS[args.method]
    if method is SaliencySource.PLAIN_AGGREGATE:
        raise ConfigError("curves supports methods gradcam/guided")
    sal = _saliency_map(bundle, method, args.smoothing_sigma, args.smoothing_kernel)
    scorer = load_scorer(args.scorer, tuple(int(d) for d in bundle.image.shape))
    curves = {
        mode: insertion_deletion(
            bundle.image, sal.values, scorer, bundle.class_index, mode, args.steps
        )
        for mode in (CurveMode.INSERTION, CurveMode.DELETION)
    }
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    stem = _bundle_stem(Path(args.bundle))

    ins, dele = curves[CurveMode.INSERTION], curves[CurveMode.DELETION]
    lines = ["fraction,insertion_score,deletion_score"]
    for f, si, sd in zip(ins.fractions, ins.scores, dele.scores):
        lines.append(f"{float(f)!r},{float(si)!r},{float(sd)!r}")
    (out / f"{stem}.curves.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")

    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(ins.fractions, ins.scores, label=f"insertion (AUC={ins.auc:.4f})")
    ax.plot(dele.fractions, dele.scores, label=f"deletion (AUC={dele.auc:.4f})")
    ax.set_xlabel("pixel fraction")
    ax.set_ylabel(f"class {bundle.class_index} probability")
    ax.set_title(f"{stem} ({args.method})")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out / f"{stem}.curves.png")
    plt.close(fig)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="camkit", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_smoothing(p):
        p.add_argument("--smoothing-sigma", type=float, default=1.0, dest="smoothing_sigma")
        p.add_argument("--smoothing-kernel", type=int, default=5, dest="smoothing_kernel")

    p = sub.add_parser("explain", help="write a saliency map and heatmap overlay for one bundle")
    p.add_argument("bundle")
    p.add_argument("--method", choices=("guided", "gradcam", "plain"), default="guided")
    p.add_argument("--out", default="out")
    p.add_argument("--alpha", type=float, default=DEFAULT_ALPHA)
    add_smoothing(p)
    p.set_defaults(func=cmd_explain)

    p = sub.add_parser("evaluate", help="run the metric suite over a collection")
    p.add_argument("config", help="JSON run configuration")
    p.add_argument("--tau", type=float, default=None)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--subsample", type=int, default=None)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("curves", help="insertion/deletion curves for one bundle")
    p.add_argument("bundle")
    p.add_argument("--scorer", required=True, help=".onnx graph or .json stub table")
    p.add_argument("--method", choices=("guided", "gradcam"), default="guided")
    p.add_argument("--steps", type=int, default=100)
    p.add_argument("--out", default="out")
    add_smoothing(p)
    p.set_defaults(func=cmd_curves)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except _USAGE_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (CamKitError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
