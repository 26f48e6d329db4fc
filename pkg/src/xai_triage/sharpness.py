"""Laplacian-based sharpness scoring, gating, and threshold sweeps.

A high-pass kernel (4/6 center, -1/6 cross neighbors) approximates the
second spatial derivative of the luminance image; the dispersion of the
filtered field serves as the sharpness indicator.  Blurry images score
low and can be gated out before inference.

Note the deliberate asymmetry, kept exactly as specified: the reference
level mu is the mean of |L|, while the dispersion sums squared
deviations of the *signed* L from mu.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn import Network, predict_class
from .rebalance import accuracy_from_predictions

LAPLACIAN_KERNEL = np.array(
    [[0.0, -1.0, 0.0], [-1.0, 4.0, -1.0], [0.0, -1.0, 0.0]]
) / 6.0

__all__ = [
    "LAPLACIAN_KERNEL",
    "to_luminance",
    "laplacian_filter",
    "sharpness_score",
    "box_blur",
    "gate",
    "sweep_thresholds",
    "sweep_to_csv",
    "SweepPoint",
]


def to_luminance(rgb: np.ndarray) -> np.ndarray:
    """Rec.601 luminance of an (H, W, 3) image with values in [0, 1].

    Y = 0.299 R + 0.587 G + 0.114 B, anchored at the blue channel so the
    coefficients sum to exactly 1: gray inputs pass through unchanged.
    """
    rgb = np.asarray(rgb, dtype=np.float64)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ValueError(f"expected (H, W, 3), got {rgb.shape}")
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    y = b + 0.299 * (r - b) + 0.587 * (g - b)
    return np.clip(y, 0.0, 1.0)


def laplacian_filter(gray: np.ndarray) -> np.ndarray:
    """Valid-mode correlation with the high-pass kernel; output (H-2, W-2).

    Computed as (4*center - neighbors) / 6 so that constant and linear
    fields with dyadic values map to exact zeros.
    """
    gray = np.asarray(gray, dtype=np.float64)
    if gray.ndim != 2 or gray.shape[0] < 3 or gray.shape[1] < 3:
        raise ValueError(f"image must be at least 3x3, got shape {gray.shape}")
    c = gray[1:-1, 1:-1]
    n = gray[:-2, 1:-1]
    s = gray[2:, 1:-1]
    w = gray[1:-1, :-2]
    e = gray[1:-1, 2:]
    # Grouped so opposing neighbors pair up: constants and axis-aligned
    # linear ramps cancel to exact zeros.
    return (4.0 * c - ((n + s) + (w + e))) / 6.0


def sharpness_score(gray: np.ndarray) -> tuple[float, float]:
    """(V, V normalized by the filtered-field pixel count)."""
    filtered = laplacian_filter(gray)
    mu = float(np.mean(np.abs(filtered)))
    v = float(np.sum((filtered - mu) ** 2))
    return v, v / filtered.size


def box_blur(gray: np.ndarray, passes: int = 1) -> np.ndarray:
    """Same-size 3x3 box blur with replicated edges, applied ``passes`` times."""
    out = np.asarray(gray, dtype=np.float64)
    for _ in range(passes):
        padded = np.pad(out, 1, mode="edge")
        acc = np.zeros_like(out)
        for di in range(3):
            for dj in range(3):
                acc += padded[di : di + out.shape[0], dj : dj + out.shape[1]]
        out = acc / 9.0
    return out


def gate(samples, threshold: float, variant: str = "normalized", key=None):
    """Split samples into (kept, discarded) by sharpness score.

    ``samples`` are luminance images, or arbitrary records when ``key``
    maps one to its luminance image.  Order-preserving; a sample is kept
    when its score is >= threshold.
    """
    if threshold < 0:
        raise ValueError(f"threshold must be >= 0, got {threshold}")
    if variant not in ("raw", "normalized"):
        raise ValueError(f"variant must be 'raw' or 'normalized', got {variant!r}")
    kept, discarded = [], []
    for sample in samples:
        gray = key(sample) if key else sample
        v, v_norm = sharpness_score(gray)
        score = v if variant == "raw" else v_norm
        (kept if score >= threshold else discarded).append(sample)
    return kept, discarded


@dataclass(frozen=True)
class SweepPoint:
    threshold: float
    kept_count: int
    per_class: dict  # class index -> accuracy; gated-out classes absent
    macro: float | None  # None when nothing is left to score


def sweep_thresholds(net: Network, samples, thresholds, variant: str = "normalized",
                     to_gray=None) -> list[SweepPoint]:
    """Accuracy-versus-threshold curve over (image, label) samples.

    ``samples`` are (input tensor, class index) pairs; ``to_gray`` maps
    an input tensor to its luminance image (defaults to squeezing a
    single-channel (1, H, W) tensor or taking a 2-D tensor as-is).
    Thresholds must be sorted ascending.  Predictions are computed once;
    each threshold re-filters the same per-sample scores.
    """
    thresholds = [float(t) for t in thresholds]
    if any(b < a for a, b in zip(thresholds, thresholds[1:])):
        raise ValueError("thresholds must be sorted ascending")
    if to_gray is None:
        to_gray = _default_gray
    scored = []
    for x, y in samples:
        v, v_norm = sharpness_score(to_gray(x))
        score = v if variant == "raw" else v_norm
        pred, _ = predict_class(net, x)
        scored.append((score, int(y), pred))
    points = []
    for t in thresholds:
        kept = [(y, p) for score, y, p in scored if score >= t]
        per_class, macro = accuracy_from_predictions(
            [y for y, _ in kept], [p for _, p in kept]
        )
        points.append(SweepPoint(t, len(kept), per_class, macro))
    return points


def _default_gray(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 3 and x.shape[0] == 1:
        return x[0]
    if x.ndim == 3 and x.shape[0] == 3:
        return to_luminance(np.moveaxis(x, 0, -1))
    if x.ndim == 2:
        return x
    raise ValueError(f"cannot derive a luminance image from shape {x.shape}")


def sweep_to_csv(points: list[SweepPoint], class_names, sink) -> None:
    """Emit the sweep as CSV: threshold, kept_count, per-class, macro."""
    lines = ["threshold,kept_count," + ",".join(f"acc_{c}" for c in class_names) + ",macro_mean"]
    for p in points:
        cells = [repr(p.threshold), str(p.kept_count)]
        for idx in range(len(class_names)):
            cells.append("" if idx not in p.per_class else repr(p.per_class[idx]))
        cells.append("" if p.macro is None else repr(p.macro))
        lines.append(",".join(cells))
    text = "\n".join(lines) + "\n"
    if hasattr(sink, "write"):
        sink.write(text)
    else:
        from pathlib import Path

        Path(sink).write_text(text)
