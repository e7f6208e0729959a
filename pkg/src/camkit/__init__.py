"""camkit: class-activation saliency maps and their evaluation suite."""

from .cam import (
    Interpolation,
    PostprocessConfig,
    RawSaliency,
    SaliencyMap,
    SaliencySource,
    aggregate_features,
    channel_weights,
    gradcam,
    guidance_map,
    guided_cam,
    postprocess,
)
from .datasets import (
    Annotation,
    AnnotationKind,
    Box,
    CollectionScan,
    EvalItem,
    load_annotation,
    scan_collection,
)
from .errors import (
    AnnotationError,
    CamKitError,
    ConfigError,
    FormatError,
    IoError,
    MissingComponent,
    ModelLoadError,
    NonFiniteData,
    RangeError,
    ScoringError,
    ShapeError,
)
from .metrics import (
    Curve,
    CurveMode,
    EvalConfig,
    MetricRecord,
    MetricReport,
    PointingResult,
    Zone,
    binarize,
    dice,
    drop_fraction,
    evaluate_collection,
    evaluate_item,
    increase_indicator,
    insertion_deletion,
    iou,
    pointing_game,
    report_to_csv,
    report_to_dict,
    soft_mask,
)
from .scoring import (
    ClassScore,
    OnnxScorer,
    Scorer,
    StubScorer,
    image_digest,
    load_scorer,
    load_stub_scorer,
    score,
    softmax,
)
from .tensorio import ExtractionBundle, load_bundle, read_npy, save_bundle, write_npy

__version__ = "0.1.0"
