"""Saliency-map kernels: channel aggregation, gradient weighting, guidance
masking, and the smooth / normalize / upsample post-processing pipeline.

All functions are pure and operate on plain numpy arrays. Feature and
gradient stacks are (K, h, w); saliency maps are 2-D. ReLU is applied once,
after the channel sum, never per channel.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError


class SaliencySource(enum.Enum):
    """Which formulation produced a saliency map."""

    PLAIN_AGGREGATE = "plain"
    GRADCAM = "gradcam"
    GUIDED_CAM = "guided"


class Interpolation(enum.Enum):
    BILINEAR = "bilinear"


@dataclass(frozen=True)
class RawSaliency:
    """Feature-resolution saliency map, before post-processing.

    Values are nonnegative for GRADCAM and GUIDED_CAM (post-ReLU). Plain
    channel aggregation is deliberately unclamped and may contain negatives.
    """

    values: np.ndarray
    source: SaliencySource


@dataclass(frozen=True)
class SaliencyMap:
    """Post-processed saliency map at target (input-image) resolution.

    Values lie in [0, 1]; the maximum is 1 up to interpolation unless the
    map is identically zero.
    """

    values: np.ndarray
    source: SaliencySource


@dataclass(frozen=True)
class PostprocessConfig:
    """Settings for the fixed smooth -> normalize -> upsample pipeline.

    ``smoothing_sigma`` is the Gaussian std in feature-map pixels; 0 disables
    smoothing. ``smoothing_kernel`` must be odd. ``target_size`` is (H, W)
    and must not be smaller than the feature map in either dimension.
    """

    target_size: tuple[int, int]
    smoothing_sigma: float = 1.0
    smoothing_kernel: int = 5
    interpolation: Interpolation = Interpolation.BILINEAR

    def __post_init__(self):
        if self.smoothing_sigma < 0:
            raise ConfigError(f"smoothing_sigma must be >= 0, got {self.smoothing_sigma}")
        if self.smoothing_kernel < 1 or self.smoothing_kernel % 2 == 0:
            raise ConfigError(f"smoothing_kernel must be odd and >= 1, got {self.smoothing_kernel}")
        if len(self.target_size) != 2 or min(self.target_size) < 1:
            raise ConfigError(f"target_size must be a positive (H, W), got {self.target_size}")
        if not isinstance(self.interpolation, Interpolation):
            raise ConfigError(f"unknown interpolation {self.interpolation!r}")


def _as_stack(arr: np.ndarray, what: str) -> np.ndarray:
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim != 3:
        raise ShapeError(f"{what} must be (K, h, w), got shape {arr.shape}")
    if arr.shape[0] < 1:
        raise ShapeError(f"{what} has no channels")
    if arr.shape[1] < 1 or arr.shape[2] < 1:
        raise ShapeError(f"{what} has an empty spatial grid: {arr.shape}")
    return arr


def aggregate_features(features: np.ndarray) -> RawSaliency:
    """Sum all feature channels into one map (no weighting, no ReLU).

    The result is unclamped: negatives survive, so downstream consumers that
    need a nonnegative map must clamp or normalize themselves.
    """
    feats = _as_stack(features, "features")
    return RawSaliency(values=feats.sum(axis=0), source=SaliencySource.PLAIN_AGGREGATE)


def channel_weights(gradients: np.ndarray) -> np.ndarray:
    """Spatial mean of each gradient channel: one scalar weight per channel."""
    grads = _as_stack(gradients, "gradients")
    return grads.mean(axis=(1, 2))


def gradcam(features: np.ndarray, weights: np.ndarray) -> RawSaliency:
    """Gradient-weighted channel sum, ReLU applied after the sum.

    Args:
        features: (K, h, w) feature stack.
        weights: length-K vector, typically from :func:`channel_weights`.
    """
    feats = _as_stack(features, "features")
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim != 1 or w.shape[0] != feats.shape[0]:
        raise ShapeError(f"need {feats.shape[0]} weights, got shape {w.shape}")
    summed = np.tensordot(w, feats, axes=(0, 0))
    return RawSaliency(values=np.maximum(summed, 0.0), source=SaliencySource.GRADCAM)


def guidance_map(features: np.ndarray, gradients: np.ndarray) -> np.ndarray:
    """Elementwise gradient-feature agreement map, summed over channels.

    Every gradient element contributes at its own location instead of being
    collapsed into a channel mean, so the map marks class-specific regions.
    ReLU keeps only positively supported pixels; the result is (h, w), >= 0.
    """
    feats = _as_stack(features, "features")
    grads = _as_stack(gradients, "gradients")
    if feats.shape != grads.shape:
        raise ShapeError(f"features {feats.shape} and gradients {grads.shape} differ")
    return np.maximum((grads * feats).sum(axis=0), 0.0)


def guided_cam(features: np.ndarray, gradients: np.ndarray) -> RawSaliency:
    """Weighted channel sum with each channel first masked by the guidance map.

    The guidance map is broadcast identically over all K channels, confining
    the mean-gradient weighting to pixels the gradients actually support.
    When the guidance map is all ones this reduces exactly to plain
    gradient-weighted aggregation.
    """
    feats = _as_stack(features, "features")
    grads = _as_stack(gradients, "gradients")
    if feats.shape != grads.shape:
        raise ShapeError(f"features {feats.shape} and gradients {grads.shape} differ")
    guide = guidance_map(feats, grads)
    w = channel_weights(grads)
    summed = np.tensordot(w, guide[None, :, :] * feats, axes=(0, 0))
    return RawSaliency(values=np.maximum(summed, 0.0), source=SaliencySource.GUIDED_CAM)


def gaussian_kernel(sigma: float, size: int) -> np.ndarray:
    """Sampled 1-D Gaussian of odd length ``size``, normalized to sum 1."""
    if size % 2 == 0 or size < 1:
        raise ConfigError(f"kernel size must be odd and >= 1, got {size}")
    if sigma <= 0:
        k = np.zeros(size)
        k[size // 2] = 1.0
        return k
    x = np.arange(size, dtype=np.float64) - size // 2
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def gaussian_smooth(values: np.ndarray, sigma: float, size: int) -> np.ndarray:
    """Separable Gaussian blur with reflective (symmetric) border handling."""
    vals = np.asarray(values, dtype=np.float64)
    if vals.ndim != 2:
        raise ShapeError(f"expected a 2-D map, got shape {vals.shape}")
    if sigma <= 0 or size == 1:
        return vals.copy()
    k = gaussian_kernel(sigma, size)
    r = size // 2
    padded = np.pad(vals, ((r, r), (0, 0)), mode="symmetric")
    rows = np.zeros_like(vals)
    for t in range(size):
        rows += k[t] * padded[t : t + vals.shape[0], :]
    padded = np.pad(rows, ((0, 0), (r, r)), mode="symmetric")
    out = np.zeros_like(vals)
    for t in range(size):
        out += k[t] * padded[:, t : t + vals.shape[1]]
    return out


def minmax_normalize(values: np.ndarray) -> np.ndarray:
    """Rescale to [0, 1]. Identically-zero maps stay zero; other constant
    maps become all ones (every pixel equally salient)."""
    vals = np.asarray(values, dtype=np.float64)
    lo = vals.min()
    hi = vals.max()
    if hi == lo:
        return np.zeros_like(vals) if hi == 0.0 else np.ones_like(vals)
    return (vals - lo) / (hi - lo)


def bilinear_resize(values: np.ndarray, target_size: tuple[int, int]) -> np.ndarray:
    """Bilinear upsampling with the align-corners convention.

    Output pixel (i, j) samples input coordinate (i*(h-1)/(H-1), j*(w-1)/(W-1));
    single-row or single-column inputs are held constant along that axis.
    """
    vals = np.asarray(values, dtype=np.float64)
    if vals.ndim != 2:
        raise ShapeError(f"expected a 2-D map, got shape {vals.shape}")
    h, w = vals.shape
    out_h, out_w = target_size
    if out_h == h and out_w == w:
        return vals.copy()

    def axis_coords(n_in: int, n_out: int) -> np.ndarray:
        if n_out == 1 or n_in == 1:
            return np.zeros(n_out)
        return np.arange(n_out) * (n_in - 1) / (n_out - 1)

    ys = axis_coords(h, out_h)
    xs = axis_coords(w, out_w)
    y0 = np.minimum(np.floor(ys).astype(int), h - 1)
    x0 = np.minimum(np.floor(xs).astype(int), w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    top = vals[np.ix_(y0, x0)] * (1 - fx) + vals[np.ix_(y0, x1)] * fx
    bottom = vals[np.ix_(y1, x0)] * (1 - fx) + vals[np.ix_(y1, x1)] * fx
    return top * (1 - fy) + bottom * fy


def postprocess(raw: RawSaliency, cfg: PostprocessConfig) -> SaliencyMap:
    """Fixed pipeline: Gaussian smoothing at feature resolution, min-max
    normalization to [0, 1], then bilinear upsampling to ``cfg.target_size``.

    Raises ConfigError when the target is smaller than the feature map.
    """
    vals = np.asarray(raw.values, dtype=np.float64)
    if vals.ndim != 2:
        raise ShapeError(f"raw saliency must be 2-D, got shape {vals.shape}")
    out_h, out_w = cfg.target_size
    if out_h < vals.shape[0] or out_w < vals.shape[1]:
        raise ConfigError(
            f"target_size {cfg.target_size} smaller than feature map {vals.shape}"
        )
    smoothed = gaussian_smooth(vals, cfg.smoothing_sigma, cfg.smoothing_kernel)
    normalized = minmax_normalize(smoothed)
    upsampled = bilinear_resize(normalized, (out_h, out_w))
    # Interpolating values in [0, 1] cannot escape [0, 1]; clip only guards
    # against last-ulp rounding.
    return SaliencyMap(values=np.clip(upsampled, 0.0, 1.0), source=raw.source)
