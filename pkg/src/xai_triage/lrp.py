"""Backward relevance propagation through a traced network.

The share of an output score attributed to each neuron flows backward
layer by layer: every neuron passes its relevance down in proportion to
how much each lower neuron contributed to its pre-activation, so totals
are conserved layer-wise and, for the plain rule on bias-free networks,
globally match the explained logit.

Rule variants: ``basic`` divides by the raw contributions, ``epsilon``
adds a signed stabilizer to the denominator (absorbing some relevance),
``gamma`` favors positive weights, and ``zbounds`` anchors the first
layer to the input value range.  Bias contributions stay in the
denominator and are absorbed, never redistributed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateDenominatorError, TraceMismatchError
from .nn import ActivationTrace, Network

__all__ = [
    "BasicRule",
    "EpsilonRule",
    "GammaRule",
    "ZBoundsRule",
    "RuleConfig",
    "Heatmap",
    "relevance",
    "relevance_field",
    "relevance_from_output",
    "propagate_dense",
    "propagate_conv",
    "propagate_pool",
    "propagate_relu",
]


@dataclass(frozen=True)
class BasicRule:
    """Plain proportional redistribution; errors out on zero denominators."""


@dataclass(frozen=True)
class EpsilonRule:
    """Signed stabilizer ``epsilon + adaptive * std(|z|)`` on denominators."""

    epsilon: float = 1e-6
    adaptive: float = 0.0

    def __post_init__(self):
        if self.epsilon < 0 or self.adaptive < 0:
            raise ValueError("epsilon terms must be >= 0")


@dataclass(frozen=True)
class GammaRule:
    """Boost positive weights by ``1 + gamma`` before redistribution."""

    gamma: float = 0.25

    def __post_init__(self):
        if self.gamma < 0:
            raise ValueError("gamma must be >= 0")


@dataclass(frozen=True)
class ZBoundsRule:
    """First-layer rule anchored to the input value range [low, high]."""

    low: float = 0.0
    high: float = 1.0

    def __post_init__(self):
        if not self.low < self.high:
            raise ValueError("zbounds needs low < high")


Rule = BasicRule | EpsilonRule | GammaRule | ZBoundsRule


@dataclass(frozen=True)
class RuleConfig:
    """Per-layer-kind rule assignment.

    ``first_layer`` overrides the kind rule on the input-adjacent
    weighted layer and is the only slot that accepts ``ZBoundsRule``.
    Pools take at most an epsilon stabilizer.
    """

    dense: Rule = BasicRule()
    conv: Rule = BasicRule()
    pool: Rule = BasicRule()
    first_layer: Rule | None = None

    def __post_init__(self):
        for slot, rule in (("dense", self.dense), ("conv", self.conv), ("pool", self.pool)):
            if isinstance(rule, ZBoundsRule):
                raise ValueError(f"zbounds is only valid for first_layer, not {slot}")
        if isinstance(self.pool, GammaRule):
            raise ValueError("pool rule must be basic or epsilon")

    @classmethod
    def pure_basic(cls) -> "RuleConfig":
        return cls()

    @classmethod
    def default(cls, low: float = 0.0, high: float = 1.0) -> "RuleConfig":
        """Understandability-oriented composite: input bounds on the first
        weighted layer, gamma on remaining convolutions, adaptive epsilon
        on dense layers."""
        return cls(
            dense=EpsilonRule(epsilon=1e-6, adaptive=0.25),
            conv=GammaRule(0.25),
            pool=EpsilonRule(epsilon=1e-9),
            first_layer=ZBoundsRule(low, high),
        )


@dataclass(frozen=True)
class Heatmap:
    """Per-pixel relevance aligned to the classified image."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise ValueError(f"heatmap must be 2-D, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("heatmap contains NaN or Inf")
        v = v.copy()
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @classmethod
    def from_field(cls, field: np.ndarray) -> "Heatmap":
        """Collapse an input-shaped relevance field to 2-D (channels sum)."""
        field = np.asarray(field, dtype=np.float64)
        if field.ndim == 3:
            return cls(field.sum(axis=0))
        if field.ndim == 1:
            return cls(field[None, :])
        return cls(field)


def _rho(weights: np.ndarray, bias: np.ndarray, rule) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(rule, GammaRule):
        return (
            weights + rule.gamma * np.clip(weights, 0.0, None),
            bias + rule.gamma * np.clip(bias, 0.0, None),
        )
    return weights, bias


def _sensitivities(r_upper: np.ndarray, z: np.ndarray, rule, where: str) -> np.ndarray:
    """s_k = R_k / z_k with the rule's stabilizer; zero relevance stays zero."""
    eps = 0.0
    if isinstance(rule, EpsilonRule):
        eps = rule.epsilon
        if rule.adaptive:
            eps += rule.adaptive * float(np.std(np.abs(z)))
    s = np.zeros_like(z)
    active = r_upper != 0.0
    if not active.any():
        return s
    if eps > 0.0:
        stabilized = z + np.where(z >= 0.0, eps, -eps)
        s[active] = r_upper[active] / stabilized[active]
    else:
        if np.any(active & (z == 0.0)):
            raise DegenerateDenominatorError(
                f"{where}: denominator vanished under nonzero relevance (use an epsilon rule)"
            )
        s[active] = r_upper[active] / z[active]
    return s


def propagate_dense(layer, layer_input: np.ndarray, r_upper: np.ndarray, rule) -> np.ndarray:
    x = layer_input
    if isinstance(rule, ZBoundsRule):
        w = layer.weights
        wp = np.clip(w, 0.0, None)
        wn = np.clip(w, None, 0.0)
        low = np.full_like(x, rule.low)
        high = np.full_like(x, rule.high)
        z = w @ x - wp @ low - wn @ high + layer.bias
        s = _sensitivities(r_upper, z, rule, "dense")
        return x * (w.T @ s) - low * (wp.T @ s) - high * (wn.T @ s)
    w, b = _rho(layer.weights, layer.bias, rule)
    z = w @ x + b
    s = _sensitivities(r_upper, z, rule, "dense")
    return x * (w.T @ s)


def propagate_conv(layer, layer_input: np.ndarray, r_upper: np.ndarray, rule) -> np.ndarray:
    x = layer_input
    if isinstance(rule, ZBoundsRule):
        w = layer.weights
        wp = np.clip(w, 0.0, None)
        wn = np.clip(w, None, 0.0)
        # Bounds apply to real pixels only; padding cells keep zero bounds
        # so they can neither receive nor leak relevance.
        low = np.full_like(x, rule.low)
        high = np.full_like(x, rule.high)
        z = (
            layer.correlate(x, w)
            - layer.correlate(low, wp)
            - layer.correlate(high, wn)
            + layer.bias[:, None, None]
        )
        s = _sensitivities(r_upper, z, rule, "conv2d")
        return (
            x * layer.backward_input(s, w, x.shape)
            - low * layer.backward_input(s, wp, x.shape)
            - high * layer.backward_input(s, wn, x.shape)
        )
    w, b = _rho(layer.weights, layer.bias, rule)
    z = layer.correlate(x, w) + b[:, None, None]
    s = _sensitivities(r_upper, z, rule, "conv2d")
    return x * layer.backward_input(s, w, x.shape)


def propagate_pool(layer, layer_input: np.ndarray, r_upper: np.ndarray, rule) -> np.ndarray:
    x = layer_input
    win = layer.windows(x)  # (C, Ho, Wo, k, k)
    if layer.kind == "maxpool":
        # Winner takes all; ties inside a window split equally.
        peaks = win.max(axis=(-2, -1), keepdims=True)
        mask = win == peaks
        counts = mask.sum(axis=(-2, -1), keepdims=True)
        share = mask * (r_upper[:, :, :, None, None] / counts)
    else:
        n = layer.window * layer.window
        z = win.mean(axis=(-2, -1))
        s = _sensitivities(r_upper, z, rule, "avgpool")
        share = win * (s[:, :, :, None, None] / n)
    out = np.zeros_like(x)
    k, stride = layer.window, layer.stride
    ho, wo = share.shape[1], share.shape[2]
    for i in range(k):
        for j in range(k):
            out[:, i : i + ho * stride : stride, j : j + wo * stride : stride] += share[
                :, :, :, i, j
            ]
    return out


def propagate_relu(layer_input: np.ndarray, r_upper: np.ndarray) -> np.ndarray:
    """Relevance passes through unchanged on active units, 0 on inactive."""
    return np.where(layer_input > 0.0, r_upper, 0.0)


def _check_trace(net: Network, trace: ActivationTrace) -> None:
    inputs = trace.per_layer_inputs
    if len(inputs) != len(net.layers) + 1:
        raise TraceMismatchError(
            f"trace has {len(inputs)} entries, network wants {len(net.layers) + 1}"
        )
    for i, (arr, shape) in enumerate(zip(inputs, net.layer_shapes)):
        if arr.shape != shape:
            raise TraceMismatchError(f"trace entry {i} has shape {arr.shape}, expected {shape}")


def relevance_from_output(net: Network, trace: ActivationTrace, r_output,
                          rules: RuleConfig | None = None) -> np.ndarray:
    """Propagate an arbitrary output-layer relevance vector to the input."""
    rules = rules or RuleConfig.pure_basic()
    _check_trace(net, trace)
    r = np.asarray(r_output, dtype=np.float64)
    if r.shape != (net.num_classes,):
        raise TraceMismatchError(f"output relevance shape {r.shape} != ({net.num_classes},)")

    first_weighted = next(
        (i for i, l in enumerate(net.layers) if l.kind in ("dense", "conv2d")), None
    )
    for i in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[i]
        x = trace.per_layer_inputs[i]
        kind = layer.kind
        if kind in ("dense", "conv2d"):
            rule = rules.dense if kind == "dense" else rules.conv
            if i == first_weighted and rules.first_layer is not None:
                rule = rules.first_layer
            r = (propagate_dense if kind == "dense" else propagate_conv)(layer, x, r, rule)
        elif kind in ("maxpool", "avgpool"):
            r = propagate_pool(layer, x, r, rules.pool)
        elif kind == "relu":
            r = propagate_relu(x, r)
        else:  # flatten
            r = r.reshape(x.shape)
    return r


def relevance_field(net: Network, trace: ActivationTrace, target_class: int,
                    rules: RuleConfig | None = None) -> np.ndarray:
    """Input-shaped relevance for one class: inject its logit, propagate down."""
    if not 0 <= target_class < net.num_classes:
        raise ValueError(f"target class {target_class} out of range ({net.num_classes} classes)")
    logits = trace.per_layer_inputs[-1]
    r_out = np.zeros(net.num_classes)
    r_out[target_class] = logits[target_class]
    return relevance_from_output(net, trace, r_out, rules)


def relevance(net: Network, trace: ActivationTrace, target_class: int,
              rules: RuleConfig | None = None) -> Heatmap:
    """Pixel-wise heatmap for ``target_class`` (channels summed per pixel)."""
    return Heatmap.from_field(relevance_field(net, trace, target_class, rules))
