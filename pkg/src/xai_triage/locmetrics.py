"""Top-k intersection scoring of heatmaps against damage masks.

The score is the fraction of the k most relevant pixels that fall
inside the segmentation mask: 1 when all top-k pixels are contained in
the damage region, 0 when none are.
"""

from __future__ import annotations

import numpy as np

from .lrp import Heatmap

__all__ = ["top_k_mask", "tki", "mean_tki", "default_k"]


def default_k(height: int, width: int) -> int:
    """100 pixels or 5% of the image, whichever is smaller (at least 1)."""
    return max(1, min(100, (height * width) // 20))


def top_k_mask(h: Heatmap, k: int) -> np.ndarray:
    """Boolean mask of the k pixels with the highest signed relevance.

    Ties at the k-th value are broken by row-major pixel order, so the
    mask is deterministic and scale-invariant.
    """
    total = h.height * h.width
    if not 1 <= k <= total:
        raise ValueError(f"k={k} out of range [1, {total}]")
    flat = h.values.ravel()
    order = np.argsort(-flat, kind="stable")
    mask = np.zeros(total, dtype=bool)
    mask[order[:k]] = True
    return mask.reshape(h.height, h.width)


def tki(mask: np.ndarray, top_k: np.ndarray, k: int) -> float:
    """|mask AND top_k| / k for a top-k mask with exactly k true pixels."""
    mask = np.asarray(mask, dtype=bool)
    top_k = np.asarray(top_k, dtype=bool)
    if mask.shape != top_k.shape:
        raise ValueError(f"mask {mask.shape} and top-k mask {top_k.shape} differ in shape")
    true_count = int(top_k.sum())
    if true_count != k:
        raise ValueError(f"top-k mask has {true_count} true pixels, expected k={k}")
    return float(np.logical_and(mask, top_k).sum()) / k


def mean_tki(pairs, k: int) -> float:
    """Unweighted mean tki over (Heatmap, mask) pairs."""
    scores = [tki(mask, top_k_mask(h, k), k) for h, mask in pairs]
    if not scores:
        raise ValueError("mean_tki needs a nonempty corpus")
    return float(np.mean(scores))
