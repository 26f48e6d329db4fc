"""Seeded synthetic shell corpora for tests and demos.

Shell images are textured plates with class-dependent damage: a bright
compact patch for ``broken``, a dark smear for ``flash``, nothing for
``healthy``.  Pixel noise makes the classes overlap, so an unweighted
fit on an imbalanced corpus drifts toward the majority class; box blur
wipes the high-frequency cues that identify damage.  Corpora can be
produced in-memory as (input, label, mask, blurred) tuples or written
to disk as a manifest plus PPM/PGM files for the CLI.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .manifest import CLASSES, class_index
from .nn import Conv2D, Dense, Flatten, MaxPool, Network, ReLU
from .pnm import write_pgm, write_ppm
from .rebalance import HeadWeights, SolverConfig, extract_features, fit_weighted_logreg
from .sharpness import box_blur

SHELL_SIZE = 16
NOISE_SIGMA = 0.12
PATCH_CONTRAST = 0.32
SMEAR_CONTRAST = 0.32

__all__ = [
    "make_shell",
    "make_array_corpus",
    "make_backbone",
    "fit_baseline_head",
    "write_pipeline_corpus",
    "SHELL_SIZE",
]


def make_shell(rng: np.random.Generator, label: str, size: int = SHELL_SIZE,
               blur_passes: int = 0, noise: float = NOISE_SIGMA,
               patch: float = PATCH_CONTRAST, smear: float = SMEAR_CONTRAST):
    """One (gray image, damage mask) pair; the mask is None for healthy."""
    grad = np.linspace(0.0, 1.0, size)[:, None]
    img = 0.42 + 0.16 * grad * np.ones((size, size))
    img = img + 0.06 * np.sin(2.0 * np.pi * np.arange(size) / 4.0)[None, :]
    img = img + rng.normal(0.0, noise, (size, size))
    mask = None
    if label == "broken":
        px = int(rng.integers(2, size - 6))
        py = int(rng.integers(2, size - 6))
        img[py : py + 4, px : px + 4] += patch
        mask = np.zeros((size, size), dtype=bool)
        mask[py : py + 4, px : px + 4] = True
    elif label == "flash":
        px = int(rng.integers(1, size - 7))
        py = int(rng.integers(2, size - 5))
        img[py : py + 3, px : px + 6] -= smear
        mask = np.zeros((size, size), dtype=bool)
        mask[py : py + 3, px : px + 6] = True
    elif label != "healthy":
        raise ValueError(f"unknown label {label!r}")
    img = np.clip(img, 0.0, 1.0)
    if blur_passes:
        img = box_blur(img, blur_passes)
    return img, mask


def make_array_corpus(seed: int, counts: dict, size: int = SHELL_SIZE,
                      blur_fraction: float = 0.0, blur_passes: int = 2,
                      noise: float = NOISE_SIGMA, patch: float = PATCH_CONTRAST,
                      smear: float = SMEAR_CONTRAST):
    """List of (input tensor (1,H,W), class index, mask or None, blurred flag).

    ``counts`` maps label name to sample count; a ``blur_fraction`` of
    each class (chosen deterministically) is box-blurred.
    """
    rng = np.random.default_rng(seed)
    corpus = []
    for label in CLASSES:
        n = counts.get(label, 0)
        n_blur = int(round(n * blur_fraction))
        blur_flags = np.zeros(n, dtype=bool)
        if n_blur:
            blur_flags[rng.choice(n, size=n_blur, replace=False)] = True
        for i in range(n):
            passes = blur_passes if blur_flags[i] else 0
            gray, mask = make_shell(rng, label, size, passes, noise, patch, smear)
            corpus.append((gray[None, :, :], class_index(label), mask, bool(blur_flags[i])))
    return corpus


def _filter_bank() -> np.ndarray:
    """Fixed first-stage features: blur, high-pass both signs, edges, inverse."""
    lap = np.array([[0, -1, 0], [-1, 4, -1], [0, -1, 0]], dtype=float) / 4.0
    box = np.ones((3, 3)) / 9.0
    vert = np.array([[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]], dtype=float) / 4.0
    bank = np.stack([box, lap, -lap, vert, vert.T.copy(), -box])
    return bank[:, None, :, :]


def make_backbone(seed: int = 11, size: int = SHELL_SIZE, num_classes: int = 3) -> Network:
    """Small fixed-feature classifier: two conv blocks and a dense head.

    The first convolution is a crafted filter bank, the second a frozen
    random mixing layer; only the head is meant to be (re)trained.
    """
    rng = np.random.default_rng(seed)
    c2 = 4
    # The inverted-brightness channel needs an offset to survive the relu.
    conv1 = Conv2D(_filter_bank(), np.array([0.0, 0.0, 0.0, 0.0, 0.0, 0.55]), padding=1)
    conv2 = Conv2D(rng.normal(0.0, 0.35, (c2, 6, 3, 3)),
                   rng.uniform(0.0, 0.05, c2), padding=1)
    quarter = size // 4
    head = Dense(rng.normal(0.0, 0.01, (num_classes, c2 * quarter * quarter)),
                 np.zeros(num_classes))
    return Network(
        [conv1, ReLU(), MaxPool(2), conv2, ReLU(), MaxPool(2), Flatten(), head],
        (1, size, size),
        num_classes,
    )


def fit_baseline_head(net: Network, samples, solver: SolverConfig | None = None) -> HeadWeights:
    """Plain unweighted fit on the full (possibly imbalanced) sample list."""
    fm = extract_features(net, samples)
    uniform = np.ones(net.num_classes)
    return fit_weighted_logreg(fm, uniform, solver)


def _to_rgb_uint8(gray: np.ndarray) -> np.ndarray:
    u8 = np.round(np.clip(gray, 0.0, 1.0) * 255.0).astype(np.uint8)
    return np.repeat(u8[:, :, None], 3, axis=2)


def write_pipeline_corpus(out_dir, seed: int, counts: dict, size: int = SHELL_SIZE,
                          blur_fraction: float = 0.0, blur_passes: int = 2,
                          noise: float = NOISE_SIGMA, split: str = "test",
                          pad: int = 3) -> Path:
    """Emit a manifest corpus: scene PPMs, mask PGMs, manifest.jsonl.

    Each record is one shell embedded in a slightly larger scene image;
    the insulator box strips the scene margin and the shell box the
    remaining border, exercising both crop stages.
    """
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    (out_dir / "masks").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    corpus = make_array_corpus(seed, counts, size, blur_fraction, blur_passes, noise)
    lines = []
    for i, (x, y, mask, _) in enumerate(corpus):
        label = CLASSES[y]
        gray = x[0]
        scene = np.clip(
            0.5 + rng.normal(0.0, 0.03, (size + 2 * pad, size + 2 * pad)), 0.0, 1.0
        )
        scene[pad : pad + size, pad : pad + size] = gray
        name = f"{label}_{i:04d}"
        write_ppm(_to_rgb_uint8(scene), out_dir / "images" / f"{name}.ppm")
        record = {
            "image": f"images/{name}.ppm",
            "boxes": [[1, 1, size + 2 * pad - 2, size + 2 * pad - 2]],
            "shell_boxes": [[pad - 1, pad - 1, size, size]],
            "label": label,
            "split": split,
        }
        if mask is not None:
            write_pgm(mask.astype(np.uint8) * np.uint8(255), out_dir / "masks" / f"{name}.pgm")
            record["mask"] = f"masks/{name}.pgm"
        lines.append(json.dumps(record, sort_keys=True))
    manifest = out_dir / "manifest.jsonl"
    manifest.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return manifest
