"""Spectral indices, RGB composites, and display rendering.

Index conventions:
  NDWI = (B3 - B8A) / (B3 + B8A)   water bodies
  NDMI = (B8A - B11) / (B8A + B11) vegetation moisture

Zero-denominator pixels map to 0 so downstream statistics stay finite.

Composites copy band planes verbatim (no rescaling); display scaling
happens in :func:`render_visual` via per-channel percentile white
balance and gamma correction.
"""

from __future__ import annotations

import enum

import numpy as np

from .errors import DataError, ShapeMismatchError
from .raster import BandId, BandStack


class IndexKind(enum.Enum):
    NDWI = "ndwi"
    NDMI = "ndmi"


class CompositeKind(enum.Enum):
    TRUE_COLOR = "true"
    URBAN_FALSE_COLOR = "urban"
    SWIR_COMPOSITE = "swir"


# RGB channel assignment per composite.
_COMPOSITE_BANDS = {
    CompositeKind.TRUE_COLOR: (BandId.B4, BandId.B3, BandId.B2),
    CompositeKind.URBAN_FALSE_COLOR: (BandId.B12, BandId.B11, BandId.B4),
    CompositeKind.SWIR_COMPOSITE: (BandId.B12, BandId.B8A, BandId.B4),
}

_INDEX_BANDS = {
    IndexKind.NDWI: (BandId.B3, BandId.B8A),
    IndexKind.NDMI: (BandId.B8A, BandId.B11),
}


def compute_index(stack: BandStack, kind: IndexKind) -> np.ndarray:
    """Normalized difference index as an H x W float32 map."""
    a_band, b_band = _INDEX_BANDS[kind]
    a = stack.band(a_band).astype(np.float64)
    b = stack.band(b_band).astype(np.float64)
    num = a - b
    den = a + b
    out = np.zeros_like(num)
    nz = den != 0
    out[nz] = num[nz] / den[nz]
    return out.astype(np.float32)


def compose(stack: BandStack, kind: CompositeKind) -> np.ndarray:
    """Extract the composite's RGB channels as a 3 x H x W array, unmodified."""
    return np.stack([stack.band(band) for band in _COMPOSITE_BANDS[kind]])


def render_visual(
    rgb: np.ndarray,
    low_pct: float = 1.0,
    high_pct: float = 99.0,
    gamma: float = 2.2,
) -> np.ndarray:
    """White-balanced, gamma-corrected 8-bit image (H x W x 3 uint8).

    Per channel: clip to the [low_pct, high_pct] percentile range,
    rescale to [0, 1], apply v**(1/gamma), quantize with round(v*255).
    A degenerate percentile range (constant channel) renders as zeros.
    """
    if not (0 <= low_pct < high_pct <= 100):
        raise DataError("need 0 <= low_pct < high_pct <= 100")
    if gamma <= 0:
        raise DataError("gamma must be positive")
    rgb = np.asarray(rgb)
    if rgb.ndim != 3 or rgb.shape[0] != 3:
        raise ShapeMismatchError("expected a 3 x H x W composite")
    if rgb.size == 0:
        raise DataError("cannot render an empty image")
    out = np.zeros(rgb.shape[1:] + (3,), dtype=np.uint8)
    inv_gamma = 1.0 / gamma
    for c in range(3):
        chan = rgb[c].astype(np.float64)
        lo, hi = np.percentile(chan, [low_pct, high_pct])
        if hi <= lo:
            continue
        scaled = (np.clip(chan, lo, hi) - lo) / (hi - lo)
        out[..., c] = np.round(scaled**inv_gamma * 255.0).astype(np.uint8)
    return out


def render_index(index_map: np.ndarray) -> np.ndarray:
    """Map an index in [-1, 1] to an 8-bit grayscale RGB image."""
    v = np.clip((np.asarray(index_map, dtype=np.float64) + 1.0) / 2.0, 0.0, 1.0)
    gray = np.round(v * 255.0).astype(np.uint8)
    return np.stack([gray, gray, gray], axis=-1)


def error_map(pred: np.ndarray, ref: np.ndarray, clip: float) -> np.ndarray:
    """Per-pixel mean absolute channel error, clipped and rescaled to [0, 1]."""
    if clip <= 0:
        raise DataError("clip must be positive")
    pred = np.asarray(pred)
    ref = np.asarray(ref)
    if pred.shape != ref.shape or pred.ndim != 3:
        raise ShapeMismatchError("prediction and reference do not match")
    mad = np.abs(pred.astype(np.float64) - ref.astype(np.float64)).mean(axis=0)
    return (np.minimum(mad, clip) / clip).astype(np.float32)


def save_png(image: np.ndarray, path) -> None:
    """Write an H x W x 3 uint8 array as a PNG file."""
    from PIL import Image

    Image.fromarray(image, mode="RGB").save(path, format="PNG")
