"""Imbalance correction by retraining the classifier head.

The dataset is split into balanced partitions (majority classes
undersampled, minorities reused); on each partition a class-weighted
multinomial logistic regression is fit to the penultimate-layer
features, and the partition heads are averaged element-wise into the
final replacement head.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import DivergenceError, XaiTriageError
from .nn import Network, forward, predict_class

log = logging.getLogger(__name__)

__all__ = [
    "FeatureMatrix",
    "HeadWeights",
    "SolverConfig",
    "extract_features",
    "make_partitions",
    "inverse_frequency_weights",
    "fit_weighted_logreg",
    "weighted_loss",
    "loss_and_grad",
    "average_heads",
    "replace_head",
    "head_of",
    "per_class_accuracy",
    "accuracy_from_predictions",
    "rebalance_head",
    "feature_stats",
]


@dataclass
class FeatureMatrix:
    """Penultimate-layer features, one row per sample, with labels.

    ``skipped`` records (sample index, reason) for inputs that failed to
    load; their rows are absent.
    """

    features: np.ndarray  # (n, F)
    labels: np.ndarray  # (n,) int
    skipped: tuple = ()

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2:
            raise ValueError(f"features must be 2-D, got shape {self.features.shape}")
        if self.labels.shape != (self.features.shape[0],):
            raise ValueError("one label per feature row required")


@dataclass(frozen=True)
class HeadWeights:
    """Replacement head: weights (F, num_classes) plus bias (num_classes,)."""

    weights: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        b = np.asarray(self.bias, dtype=np.float64)
        if w.ndim != 2 or b.shape != (w.shape[1],):
            raise ValueError(f"inconsistent head shapes {w.shape} / {b.shape}")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise ValueError("head weights contain NaN or Inf")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", b)


@dataclass(frozen=True)
class SolverConfig:
    learning_rate: float = 0.1
    max_iters: int = 5000
    tol: float = 1e-6


def extract_features(net: Network, samples, load=None) -> FeatureMatrix:
    """Features feeding the final dense layer, one row per sample.

    ``samples`` are (input, label) pairs, or arbitrary records when
    ``load`` maps a record to such a pair.  Unreadable samples are
    skipped and reported in ``FeatureMatrix.skipped``.
    """
    if net.layers[-1].kind != "dense":
        raise ValueError("network must end in a dense layer")
    rows, labels, skipped = [], [], []
    for i, sample in enumerate(samples):
        try:
            x, y = load(sample) if load else sample
            _, trace = forward(net, x, trace=True)
            rows.append(trace.per_layer_inputs[-2])
            labels.append(int(y))
        except (XaiTriageError, OSError, ValueError) as e:
            skipped.append((i, str(e)))
    if skipped:
        log.warning("extract_features skipped %d of %d samples", len(skipped), len(skipped) + len(rows))
    width = net.penultimate_width
    feats = np.vstack(rows) if rows else np.empty((0, width))
    return FeatureMatrix(feats, np.asarray(labels, dtype=np.int64), tuple(skipped))


def make_partitions(samples, num_partitions: int = 10, seed: int = 0,
                    label_of=None, classes=None) -> list[list]:
    """Balanced subsets: per partition every class contributes the same
    count (the global minority count).

    The majority classes are undersampled without replacement inside
    each partition; minority classes are reused in full across
    partitions.  Deterministic under a fixed seed.  ``classes``, when
    given, is the full class set to validate against (an absent class is
    an error naming it).
    """
    if num_partitions < 1:
        raise ValueError(f"num_partitions must be >= 1, got {num_partitions}")
    if label_of is None:
        label_of = lambda s: s[1]
    samples = list(samples)
    by_class: dict = {}
    for i, s in enumerate(samples):
        by_class.setdefault(label_of(s), []).append(i)
    if classes is not None:
        for c in classes:
            if c not in by_class or not by_class[c]:
                raise ValueError(f"class {c!r} has no samples")
    if not by_class:
        raise ValueError("no samples to partition")
    target = min(len(v) for v in by_class.values())
    rng = np.random.default_rng(seed)
    partitions = []
    for _ in range(num_partitions):
        chosen: list[int] = []
        for c in sorted(by_class):
            idx = by_class[c]
            if len(idx) == target:
                chosen.extend(idx)
            else:
                pick = rng.choice(len(idx), size=target, replace=False)
                chosen.extend(idx[j] for j in pick)
        partitions.append([samples[i] for i in sorted(chosen)])
    return partitions


def inverse_frequency_weights(labels: np.ndarray, num_classes: int,
                              emphasis: dict | None = None) -> np.ndarray:
    """w_c = n / (C * n_c), optionally scaled up for designated fault classes."""
    labels = np.asarray(labels)
    counts = np.bincount(labels, minlength=num_classes).astype(np.float64)
    present = counts > 0
    w = np.ones(num_classes)
    w[present] = len(labels) / (num_classes * counts[present])
    if emphasis:
        for c, factor in emphasis.items():
            w[c] *= factor
    return w


def loss_and_grad(weights: np.ndarray, bias: np.ndarray, x: np.ndarray,
                  y: np.ndarray, class_weights: np.ndarray):
    """Class-weighted multinomial cross-entropy and its gradient.

    J = -sum_i w_{c(y_i)} * log softmax(x_i @ W + b)[y_i]
    """
    logits = x @ weights + bias
    m = logits.max(axis=1, keepdims=True)
    shifted = logits - m
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - lse
    rows = np.arange(len(y))
    wy = class_weights[y]
    loss = float(-(wy * log_probs[rows, y]).sum())
    probs = np.exp(log_probs)
    g_logits = probs * wy[:, None]
    g_logits[rows, y] -= wy
    return loss, x.T @ g_logits, g_logits.sum(axis=0)


def weighted_loss(head: HeadWeights, features: FeatureMatrix,
                  class_weights: np.ndarray) -> float:
    """J of a head on raw (unstandardized) features."""
    loss, _, _ = loss_and_grad(
        head.weights, head.bias, features.features, features.labels,
        np.asarray(class_weights, dtype=np.float64),
    )
    return loss


def fit_weighted_logreg(features: FeatureMatrix, class_weights,
                        solver: SolverConfig | None = None,
                        stats=None) -> HeadWeights:
    """Fit the head by full-batch gradient descent from zero initialization.

    Steps start at the configured learning rate and are halved until the
    loss does not increase, so every accepted step is non-increasing in
    J (the objective is convex).  ``stats`` is an optional (mean, std)
    pair for feature standardization; the affine transform is folded
    back into the returned head, which therefore applies to raw
    features.
    """
    solver = solver or SolverConfig()
    x = features.features
    y = features.labels
    if len(np.unique(y)) < 2:
        raise ValueError("need at least 2 classes present to fit a head")
    if not np.all(np.isfinite(x)):
        raise ValueError("features contain NaN or Inf")
    w_c = np.asarray(class_weights, dtype=np.float64)
    if np.any(w_c <= 0):
        raise ValueError("class weights must all be > 0")
    num_classes = len(w_c)
    if y.min() < 0 or y.max() >= num_classes:
        raise ValueError("labels out of range for the given class weights")

    if stats is None:
        stats = feature_stats(x)
    mean, std = stats
    xs = (x - mean) / std

    n_features = x.shape[1]
    weights = np.zeros((n_features, num_classes))
    bias = np.zeros(num_classes)
    loss, g_w, g_b = loss_and_grad(weights, bias, xs, y, w_c)
    for it in range(solver.max_iters):
        if not np.isfinite(loss):
            raise DivergenceError(it, "loss became non-finite")
        gnorm = float(np.sqrt((g_w**2).sum() + (g_b**2).sum()))
        if gnorm < solver.tol:
            break
        step = solver.learning_rate
        while True:
            w_new = weights - step * g_w
            b_new = bias - step * g_b
            loss_new, gw_new, gb_new = loss_and_grad(w_new, b_new, xs, y, w_c)
            if np.isfinite(loss_new) and loss_new <= loss:
                break
            step *= 0.5
            if step < 1e-20:
                # Convexity means no descent step exists only at the optimum.
                log.debug("no descent step found at iteration %d; stopping", it)
                return _fold_standardization(weights, bias, mean, std)
        weights, bias, loss, g_w, g_b = w_new, b_new, loss_new, gw_new, gb_new
    return _fold_standardization(weights, bias, mean, std)


def feature_stats(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-feature mean and deviation; constant features get deviation 1."""
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    std = np.where(std == 0.0, 1.0, std)
    return mean, std


def _fold_standardization(weights, bias, mean, std) -> HeadWeights:
    # Head fit on (x - mean)/std rewritten to act on raw x.
    w_raw = weights / std[:, None]
    b_raw = bias - (mean / std) @ weights
    return HeadWeights(w_raw, b_raw)


def average_heads(heads: list[HeadWeights]) -> HeadWeights:
    """Element-wise arithmetic mean of head weights and biases."""
    if not heads:
        raise ValueError("average_heads needs at least one head")
    shape = heads[0].weights.shape
    for h in heads[1:]:
        if h.weights.shape != shape:
            raise ValueError(f"head shape mismatch: {h.weights.shape} != {shape}")
    return HeadWeights(
        np.mean([h.weights for h in heads], axis=0),
        np.mean([h.bias for h in heads], axis=0),
    )


def replace_head(net: Network, head: HeadWeights) -> Network:
    """New network with the final dense layer swapped for ``head``."""
    final = net.layers[-1]
    if head.weights.shape != (final.in_dim, final.out_dim):
        raise ValueError(
            f"head shape {head.weights.shape} does not match final layer "
            f"({final.in_dim}, {final.out_dim})"
        )
    return net.replace_final_dense(head.weights.T, head.bias)


def head_of(net: Network) -> HeadWeights:
    """The network's current final layer as a HeadWeights."""
    final = net.layers[-1]
    return HeadWeights(final.weights.T.copy(), final.bias.copy())


def accuracy_from_predictions(labels, predictions) -> tuple[dict, float | None]:
    """Per-class accuracy and macro mean from parallel label/prediction lists.

    Classes with no samples are absent from the dict and excluded from
    the macro mean; an empty input yields ({}, None).
    """
    totals: dict[int, int] = {}
    correct: dict[int, int] = {}
    for y, p in zip(labels, predictions):
        y = int(y)
        totals[y] = totals.get(y, 0) + 1
        if p == y:
            correct[y] = correct.get(y, 0) + 1
    per_class = {c: correct.get(c, 0) / n for c, n in sorted(totals.items())}
    if not per_class:
        return {}, None
    return per_class, float(np.mean(list(per_class.values())))


def per_class_accuracy(net: Network, samples, load=None) -> tuple[dict, float | None]:
    """Per-class accuracy of the network over labeled samples."""
    labels, preds = [], []
    for sample in samples:
        x, y = load(sample) if load else sample
        pred, _ = predict_class(net, x)
        labels.append(int(y))
        preds.append(pred)
    return accuracy_from_predictions(labels, preds)


def rebalance_head(net: Network, samples, num_partitions: int = 10, seed: int = 0,
                   emphasis: dict | None = None, solver: SolverConfig | None = None,
                   load=None, label_of=None, num_classes: int | None = None) -> HeadWeights:
    """Full re-biasing procedure: balanced partitions, per-partition
    class-weighted fits, element-wise head averaging.

    ``emphasis`` maps class index -> extra weight factor for fault
    classes.  Feature standardization statistics come from the union of
    the partition features, so every partition fit sees the same scale.
    """
    if num_classes is None:
        num_classes = net.num_classes
    parts = make_partitions(samples, num_partitions, seed, label_of=label_of)
    matrices = [extract_features(net, p, load) for p in parts]
    union = np.vstack([m.features for m in matrices])
    stats = feature_stats(union)
    heads = []
    for m in matrices:
        w_c = inverse_frequency_weights(m.labels, num_classes, emphasis)
        heads.append(fit_weighted_logreg(m, w_c, solver, stats=stats))
    return average_heads(heads)
