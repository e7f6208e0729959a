"""Extraction-side tooling: hooks, graph export, dataset conversion."""

from .bundles import write_bundle, write_npy_v1
from .errors import ConfigError, ExportError, ExtractorError, IoError
from .export import export_graph, export_model
from .hooks import (
    ExtractorConfig,
    extract,
    extract_tensors,
    extract_to_bundle,
    load_model,
    preprocess_file,
    resolve_layer,
)
from .models import build_model, tiny_resnet, toy_convnet
from .voc import VOC_CLASSES, convert_voc, parse_voc_boxes

__version__ = "0.1.0"
