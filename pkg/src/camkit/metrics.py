"""Saliency evaluation metrics and the batch evaluation driver.

Implements the drop/increase pair for salient and context zones, the
pointing game, Dice, IoU, and insertion/deletion curves with trapezoidal
AUC. All probabilities are post-softmax; all reported fractions lie in
[0, 1]. Metric functions operate on plain numpy arrays.
"""

from __future__ import annotations

import concurrent.futures
import enum
import threading
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .cam import (
    PostprocessConfig,
    SaliencySource,
    channel_weights,
    gaussian_smooth,
    gradcam,
    guided_cam,
    postprocess,
)
from .datasets import Annotation, AnnotationKind, EvalItem
from .errors import AnnotationError, CamKitError, ConfigError, RangeError, ShapeError
from .scoring import Scorer, score
from .tensorio import load_bundle


class Zone(enum.Enum):
    SALIENT = "salient"
    CONTEXT = "context"


class CurveMode(enum.Enum):
    INSERTION = "insertion"
    DELETION = "deletion"


METRIC_FIELDS = (
    "drop_salience",
    "increase_salience",
    "drop_context",
    "increase_context",
    "pointing_hit",
    "dice",
    "iou",
    "insertion_auc",
    "deletion_auc",
)


def soft_mask(image: np.ndarray, saliency: np.ndarray, zone: Zone) -> np.ndarray:
    """Multiplicative zone extraction: keep the salient region (image * S)
    or its complement (image * (1 - S)), broadcast over the channel axis."""
    img = np.asarray(image, dtype=np.float64)
    sal = np.asarray(saliency, dtype=np.float64)
    if img.ndim != 3 or sal.ndim != 2 or img.shape[1:] != sal.shape:
        raise ShapeError(f"image {img.shape} and saliency {sal.shape} do not align")
    factor = sal if zone is Zone.SALIENT else 1.0 - sal
    return img * factor[None, :, :]


def _check_prob(value: float, name: str) -> float:
    v = float(value)
    if not 0.0 <= v <= 1.0:
        raise RangeError(f"{name} must lie in [0, 1], got {v}")
    return v


def drop_fraction(orig_prob: float, masked_prob: float) -> float:
    """Relative confidence drop, clamped at zero; 0 when orig_prob is 0."""
    orig = _check_prob(orig_prob, "orig_prob")
    masked = _check_prob(masked_prob, "masked_prob")
    if orig == 0.0:
        return 0.0
    return max(0.0, orig - masked) / orig


def increase_indicator(orig_prob: float, masked_prob: float) -> int:
    """1 iff the masked probability strictly exceeds the original."""
    orig = _check_prob(orig_prob, "orig_prob")
    masked = _check_prob(masked_prob, "masked_prob")
    return int(masked > orig)


@dataclass(frozen=True)
class PointingResult:
    hit: bool
    degenerate: bool = False


def pointing_game(
    saliency: np.ndarray, annotation: Annotation, target_class: int
) -> PointingResult:
    """Hit iff the saliency argmax lies on the target class annotation.

    The argmax pixel is the first row-major maximum. For box annotations a
    hit means containment in any target-class box; for masks, landing on a
    pixel labeled with the target class. An identically-zero map counts as
    a miss and is flagged as degenerate.
    """
    sal = np.asarray(saliency, dtype=np.float64)
    if sal.ndim != 2:
        raise ShapeError(f"saliency must be 2-D, got shape {sal.shape}")
    if not annotation.contains_class(target_class):
        raise AnnotationError(f"annotation has no instance of class {target_class}")
    if not np.any(sal != 0):
        return PointingResult(hit=False, degenerate=True)
    row, col = np.unravel_index(int(np.argmax(sal)), sal.shape)
    if annotation.kind is AnnotationKind.SEG_MASK:
        if annotation.mask.shape != sal.shape:
            raise ShapeError(
                f"mask {annotation.mask.shape} and saliency {sal.shape} dims differ"
            )
        return PointingResult(hit=bool(annotation.mask[row, col] == target_class))
    hit = any(b.contains(row, col) for b in annotation.boxes if b.class_index == target_class)
    return PointingResult(hit=hit)


def binarize(saliency: np.ndarray, tau: float) -> np.ndarray:
    """Threshold a normalized saliency map at ``tau`` (>= convention)."""
    if not 0.0 < tau < 1.0:
        raise ConfigError(f"tau must lie in (0, 1), got {tau}")
    return np.asarray(saliency) >= tau


def _mask_counts(pred: np.ndarray, gt: np.ndarray) -> tuple[int, int, int]:
    p = np.asarray(pred, dtype=bool)
    g = np.asarray(gt, dtype=bool)
    if p.shape != g.shape:
        raise ShapeError(f"mask shapes {p.shape} and {g.shape} differ")
    return int(np.sum(p & g)), int(p.sum()), int(g.sum())


def dice(pred: np.ndarray, gt: np.ndarray) -> float:
    """Doubled intersection over total element count; 1.0 when both empty."""
    inter, a, b = _mask_counts(pred, gt)
    if a + b == 0:
        return 1.0
    return 2.0 * inter / (a + b)


def iou(pred: np.ndarray, gt: np.ndarray) -> float:
    """Intersection over union; 1.0 when both masks are empty."""
    inter, a, b = _mask_counts(pred, gt)
    union = a + b - inter
    if union == 0:
        return 1.0
    return inter / union


@dataclass(frozen=True)
class Curve:
    """Probability curve over occlusion/restoration fractions plus its AUC."""

    fractions: np.ndarray
    scores: np.ndarray
    auc: float


def make_baseline(image: np.ndarray, spec: str | np.ndarray, blur_sigma: float) -> np.ndarray:
    """Resolve a curve baseline: 'zero', 'blur' (channelwise Gaussian at
    ``blur_sigma`` input pixels) or an explicit image array."""
    img = np.asarray(image, dtype=np.float32)
    if isinstance(spec, np.ndarray):
        if spec.shape != img.shape:
            raise ShapeError(f"baseline shape {spec.shape} differs from image {img.shape}")
        return np.asarray(spec, dtype=np.float32)
    if spec == "zero":
        return np.zeros_like(img)
    if spec == "blur":
        size = 2 * int(np.ceil(3 * blur_sigma)) + 1
        blurred = [gaussian_smooth(ch, blur_sigma, size) for ch in img]
        return np.asarray(blurred, dtype=np.float32)
    raise ConfigError(f"unknown baseline spec {spec!r}")


def insertion_deletion(
    image: np.ndarray,
    saliency: np.ndarray,
    scorer: Scorer,
    class_index: int,
    mode: CurveMode,
    steps: int = 100,
    *,
    deletion_baseline: str | np.ndarray = "zero",
    insertion_baseline: str | np.ndarray = "blur",
    blur_sigma: float = 10.0,
) -> Curve:
    """Progressively remove (deletion) or restore (insertion) pixels in
    descending saliency order, recording the target-class probability.

    Pixels tie-break by row-major index. At each of ``steps + 1`` evenly
    spaced fractions, round(fraction * N) pixels are affected, so fraction 0
    scores one endpoint image exactly and fraction 1 the other. The AUC is
    the trapezoidal integral over the fraction axis.
    """
    if steps < 2:
        raise ConfigError(f"steps must be >= 2, got {steps}")
    img = np.asarray(image, dtype=np.float32)
    sal = np.asarray(saliency, dtype=np.float64)
    if img.ndim != 3 or sal.ndim != 2 or img.shape[1:] != sal.shape:
        raise ShapeError(f"image {img.shape} and saliency {sal.shape} do not align")

    spec = deletion_baseline if mode is CurveMode.DELETION else insertion_baseline
    baseline = make_baseline(img, spec, blur_sigma)
    n_pixels = sal.size
    order = np.argsort(-sal.ravel(), kind="stable")
    flat_img = img.reshape(3, -1)
    flat_base = baseline.reshape(3, -1)

    fractions = np.arange(steps + 1, dtype=np.float64) / steps
    scores = np.empty(steps + 1, dtype=np.float64)
    for i, frac in enumerate(fractions):
        k = int(np.floor(frac * n_pixels + 0.5))
        touched = order[:k]
        if mode is CurveMode.DELETION:
            frame = flat_img.copy()
            frame[:, touched] = flat_base[:, touched]
        else:
            frame = flat_base.copy()
            frame[:, touched] = flat_img[:, touched]
        scores[i] = score(scorer, frame.reshape(img.shape)).probability(class_index)
    auc = float(np.trapezoid(scores, fractions))
    return Curve(fractions=fractions, scores=scores, auc=auc)


@dataclass(frozen=True)
class EvalConfig:
    """Knobs for batch evaluation; defaults mirror the documented conventions."""

    tau: float = 0.5
    steps: int = 100
    curves: bool = True
    smoothing_sigma: float = 1.0
    smoothing_kernel: int = 5
    deletion_baseline: str = "zero"
    insertion_baseline: str = "blur"
    blur_sigma: float = 10.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.tau < 1.0:
            raise ConfigError(f"tau must lie in (0, 1), got {self.tau}")
        if self.steps < 2:
            raise ConfigError(f"steps must be >= 2, got {self.steps}")


@dataclass
class MetricRecord:
    """Per-image metric values; None marks a metric that did not apply."""

    item: str
    drop_salience: float | None = None
    increase_salience: float | None = None
    drop_context: float | None = None
    increase_context: float | None = None
    pointing_hit: float | None = None
    dice: float | None = None
    iou: float | None = None
    insertion_auc: float | None = None
    deletion_auc: float | None = None
    pointing_degenerate: bool = False

    def metric_values(self) -> dict[str, float | None]:
        return {name: getattr(self, name) for name in METRIC_FIELDS}


@dataclass
class MetricReport:
    """Per-image records, aggregate means, and per-item failures."""

    method: str
    records: list[MetricRecord] = field(default_factory=list)
    failures: list[dict] = field(default_factory=list)

    @property
    def aggregates(self) -> dict[str, float]:
        out: dict[str, float] = {}
        for name in METRIC_FIELDS:
            values = [r.metric_values()[name] for r in self.records]
            values = [v for v in values if v is not None]
            if values:
                out[name] = float(np.mean(values))
        return out


def _saliency_for(bundle, method: SaliencySource, cfg: EvalConfig) -> np.ndarray:
    if method is SaliencySource.GRADCAM:
        raw = gradcam(bundle.features, channel_weights(bundle.gradients))
    elif method is SaliencySource.GUIDED_CAM:
        raw = guided_cam(bundle.features, bundle.gradients)
    else:
        raise ConfigError(f"evaluation supports gradcam/guided, not {method}")
    target = (int(bundle.image.shape[1]), int(bundle.image.shape[2]))
    post_cfg = PostprocessConfig(
        target_size=target,
        smoothing_sigma=cfg.smoothing_sigma,
        smoothing_kernel=cfg.smoothing_kernel,
    )
    return postprocess(raw, post_cfg).values


def evaluate_item(
    item: EvalItem, method: SaliencySource, scorer: Scorer, cfg: EvalConfig
) -> MetricRecord:
    """Compute every applicable metric for one evaluation item.

    Drop and increase for a zone come from the same masked forward pass:
    one inference for the original image plus one per zone, plus the curve
    passes when enabled.
    """
    bundle = load_bundle(item.bundle_path)
    sal = _saliency_for(bundle, method, cfg)
    record = MetricRecord(item=item.stem)

    ci = bundle.class_index
    orig = score(scorer, bundle.image).probability(ci)
    salient_prob = score(scorer, soft_mask(bundle.image, sal, Zone.SALIENT)).probability(ci)
    context_prob = score(scorer, soft_mask(bundle.image, sal, Zone.CONTEXT)).probability(ci)
    record.drop_salience = drop_fraction(orig, salient_prob)
    record.increase_salience = float(increase_indicator(orig, salient_prob))
    record.drop_context = drop_fraction(orig, context_prob)
    record.increase_context = float(increase_indicator(orig, context_prob))

    pointing = pointing_game(sal, item.annotation, item.target_class)
    record.pointing_hit = float(pointing.hit)
    record.pointing_degenerate = pointing.degenerate
    if item.annotation.kind is AnnotationKind.SEG_MASK:
        gt = np.asarray(item.annotation.mask) == item.target_class
        pred = binarize(sal, cfg.tau)
        record.dice = dice(pred, gt)
        record.iou = iou(pred, gt)

    if cfg.curves:
        common = dict(
            deletion_baseline=cfg.deletion_baseline,
            insertion_baseline=cfg.insertion_baseline,
            blur_sigma=cfg.blur_sigma,
        )
        record.insertion_auc = insertion_deletion(
            bundle.image, sal, scorer, ci, CurveMode.INSERTION, cfg.steps, **common
        ).auc
        record.deletion_auc = insertion_deletion(
            bundle.image, sal, scorer, ci, CurveMode.DELETION, cfg.steps, **common
        ).auc
    return record


def evaluate_collection(
    items: Sequence[EvalItem],
    method: SaliencySource,
    scorer: Scorer,
    cfg: EvalConfig,
    workers: int = 1,
    scorer_factory: Callable[[], Scorer] | None = None,
) -> MetricReport:
    """Evaluate every item, aggregating by arithmetic mean over the items
    where a metric applied.

    Per-item failures are recorded (item + error) and excluded from the
    aggregates. Results are reduced in item order, so they do not depend on
    worker scheduling. With ``workers > 1`` each worker thread uses its own
    scorer from ``scorer_factory`` when one is provided.
    """
    report = MetricReport(method=method.value)
    if not items:
        return report

    local = threading.local()

    def worker_scorer() -> Scorer:
        if scorer_factory is None:
            return scorer
        if not hasattr(local, "scorer"):
            local.scorer = scorer_factory()
        return local.scorer

    def run_one(item: EvalItem):
        try:
            return evaluate_item(item, method, worker_scorer(), cfg)
        except CamKitError as exc:
            return {"item": item.stem, "error": f"{type(exc).__name__}: {exc}"}

    if workers <= 1:
        results = [run_one(item) for item in items]
    else:
        with concurrent.futures.ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run_one, items))

    for outcome in results:
        if isinstance(outcome, MetricRecord):
            report.records.append(outcome)
        else:
            report.failures.append(outcome)
    return report


def _fmt(value: float | None) -> str:
    return "" if value is None else repr(float(value))


def report_to_csv(report: MetricReport) -> str:
    """One row per image plus a final aggregate row; fixed column order."""
    lines = ["item," + ",".join(METRIC_FIELDS)]
    for rec in report.records:
        values = rec.metric_values()
        lines.append(rec.item + "," + ",".join(_fmt(values[n]) for n in METRIC_FIELDS))
    agg = report.aggregates
    lines.append("aggregate," + ",".join(_fmt(agg.get(n)) for n in METRIC_FIELDS))
    return "\n".join(lines) + "\n"


def report_to_dict(report: MetricReport) -> dict:
    return {
        "method": report.method,
        "per_image": [
            {"item": r.item, **r.metric_values(), "pointing_degenerate": r.pointing_degenerate}
            for r in report.records
        ],
        "aggregates": report.aggregates,
        "failures": report.failures,
        "counts": {
            "evaluated": len(report.records),
            "failed": len(report.failures),
        },
    }
