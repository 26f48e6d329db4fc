"""Deterministic heatmap rendering over the classified image.

Relevance is normalized by its peak magnitude into [-1, 1] and mapped
through a diverging colormap (blue for negative, white for zero, red for
positive), then alpha-blended over the grayscale image at a fixed 0.6
overlay weight.  An all-zero heatmap renders the plain grayscale image.
"""

from __future__ import annotations

import numpy as np

from .lrp import Heatmap

OVERLAY_WEIGHT = 0.6

__all__ = ["render_heatmap", "OVERLAY_WEIGHT"]


def _grayscale_base(image: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 3 and img.shape[0] == 3:  # (3, H, W)
        img = np.moveaxis(img, 0, -1)
    if img.ndim == 3 and img.shape[2] == 3:  # (H, W, 3)
        img = 0.299 * img[..., 0] + 0.587 * img[..., 1] + 0.114 * img[..., 2]
    elif img.ndim == 3 and img.shape[0] == 1:
        img = img[0]
    if img.ndim != 2:
        raise ValueError(f"cannot interpret image of shape {np.asarray(image).shape}")
    if img.shape != shape:
        raise ValueError(f"image {img.shape} does not match heatmap {shape}")
    return np.clip(img, 0.0, 1.0)


def _diverging(v: np.ndarray) -> np.ndarray:
    """Map values in [-1, 1] to RGB: blue < white < red."""
    rgb = np.ones(v.shape + (3,))
    pos = np.clip(v, 0.0, 1.0)
    neg = np.clip(-v, 0.0, 1.0)
    rgb[..., 1] -= pos
    rgb[..., 2] -= pos
    rgb[..., 0] -= neg
    rgb[..., 1] -= neg
    return rgb


def render_heatmap(h: Heatmap, image: np.ndarray) -> np.ndarray:
    """Render to (H, W, 3) uint8.  ``image`` holds values in [0, 1]."""
    gray = _grayscale_base(image, (h.height, h.width))
    peak = float(np.max(np.abs(h.values)))
    if peak == 0.0:
        out = np.repeat(gray[:, :, None], 3, axis=2)
    else:
        color = _diverging(h.values / peak)
        out = OVERLAY_WEIGHT * color + (1.0 - OVERLAY_WEIGHT) * gray[:, :, None]
    return np.round(out * 255.0).astype(np.uint8)
