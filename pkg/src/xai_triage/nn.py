"""Minimal traced feed-forward inference engine.

Tensors are plain numpy float64 arrays, frozen read-only so networks and
traces can be shared across workers.  Weights are quantized to the
float32 grid at construction time (the model file stores float32), so a
save/load round trip is bit-exact; all arithmetic runs in float64.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeError

__all__ = [
    "Dense",
    "Conv2D",
    "ReLU",
    "MaxPool",
    "AvgPool",
    "Flatten",
    "Network",
    "ActivationTrace",
    "forward",
    "predict_class",
    "as_tensor",
]


def as_tensor(data) -> np.ndarray:
    """Coerce to a read-only float64 array and reject non-finite values."""
    arr = np.asarray(data, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError("tensor contains NaN or Inf")
    arr = arr.copy()
    arr.setflags(write=False)
    return arr


def _as_weight(data) -> np.ndarray:
    # Round-trips through float32 so serialized weights reload bit-exactly.
    arr = np.asarray(data, dtype=np.float64).astype(np.float32).astype(np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError("weight tensor contains NaN or Inf")
    arr.setflags(write=False)
    return arr


def _freeze(arr: np.ndarray) -> np.ndarray:
    if arr.flags.writeable:
        arr = arr.copy() if arr.base is not None else arr
        arr.setflags(write=False)
    return arr


class Dense:
    """Fully connected layer: y = W @ x + b with W of shape (out, in)."""

    kind = "dense"

    def __init__(self, weights, bias=None):
        self.weights = _as_weight(weights)
        if self.weights.ndim != 2:
            raise ValueError(f"dense weights must be 2-D, got {self.weights.shape}")
        out_dim, in_dim = self.weights.shape
        self.bias = _as_weight(np.zeros(out_dim) if bias is None else bias)
        if self.bias.shape != (out_dim,):
            raise ValueError(f"dense bias shape {self.bias.shape} != ({out_dim},)")
        self.in_dim = in_dim
        self.out_dim = out_dim

    def output_shape(self, in_shape):
        if tuple(in_shape) != (self.in_dim,):
            raise ValueError(f"dense expects ({self.in_dim},), got {tuple(in_shape)}")
        return (self.out_dim,)

    def forward(self, x: np.ndarray) -> np.ndarray:
        return self.weights @ x + self.bias


class Conv2D:
    """2-D convolution on (C, H, W) inputs; weights (out_ch, in_ch, kH, kW)."""

    kind = "conv2d"

    def __init__(self, weights, bias=None, stride: int = 1, padding: int = 0):
        self.weights = _as_weight(weights)
        if self.weights.ndim != 4:
            raise ValueError(f"conv2d weights must be 4-D, got {self.weights.shape}")
        if stride < 1:
            raise ValueError(f"stride must be >= 1, got {stride}")
        if padding < 0:
            raise ValueError(f"padding must be >= 0, got {padding}")
        out_ch = self.weights.shape[0]
        self.bias = _as_weight(np.zeros(out_ch) if bias is None else bias)
        if self.bias.shape != (out_ch,):
            raise ValueError(f"conv2d bias shape {self.bias.shape} != ({out_ch},)")
        self.stride = int(stride)
        self.padding = int(padding)
        self.out_channels, self.in_channels, self.kh, self.kw = self.weights.shape

    def output_shape(self, in_shape):
        if len(in_shape) != 3 or in_shape[0] != self.in_channels:
            raise ValueError(
                f"conv2d expects ({self.in_channels}, H, W), got {tuple(in_shape)}"
            )
        _, h, w = in_shape
        ho = (h + 2 * self.padding - self.kh) // self.stride + 1
        wo = (w + 2 * self.padding - self.kw) // self.stride + 1
        if h + 2 * self.padding < self.kh or w + 2 * self.padding < self.kw:
            raise ValueError(
                f"conv2d kernel {self.kh}x{self.kw} exceeds padded input {tuple(in_shape)}"
            )
        return (self.out_channels, ho, wo)

    def _padded(self, x: np.ndarray) -> np.ndarray:
        if self.padding == 0:
            return x
        p = self.padding
        return np.pad(x, ((0, 0), (p, p), (p, p)))

    def correlate(self, x: np.ndarray, weights: np.ndarray) -> np.ndarray:
        """Bias-free correlation of x with an arbitrary weight tensor."""
        xp = self._padded(x)
        win = sliding_window_view(xp, (self.kh, self.kw), axis=(1, 2))
        win = win[:, :: self.stride, :: self.stride]
        return np.einsum("oikl,ihwkl->ohw", weights, win)

    def forward(self, x: np.ndarray) -> np.ndarray:
        return self.correlate(x, self.weights) + self.bias[:, None, None]

    def backward_input(self, grad_out: np.ndarray, weights: np.ndarray,
                       in_shape: tuple[int, ...]) -> np.ndarray:
        """Scatter grad_out back through the correlation (transposed conv)."""
        w = weights
        c, h, wdt = in_shape
        p, s = self.padding, self.stride
        ho, wo = grad_out.shape[1], grad_out.shape[2]
        acc = np.zeros((c, h + 2 * p, wdt + 2 * p))
        for i in range(self.kh):
            for j in range(self.kw):
                # out (o, a, b) reads padded input (c, a*s + i, b*s + j)
                contrib = np.tensordot(w[:, :, i, j], grad_out, axes=(0, 0))
                acc[:, i : i + ho * s : s, j : j + wo * s : s] += contrib
        if p:
            acc = acc[:, p : p + h, p : p + wdt]
        return acc


class ReLU:
    kind = "relu"

    def output_shape(self, in_shape):
        return tuple(in_shape)

    def forward(self, x: np.ndarray) -> np.ndarray:
        return np.maximum(x, 0.0)


class Flatten:
    kind = "flatten"

    def output_shape(self, in_shape):
        return (int(np.prod(in_shape)),)

    def forward(self, x: np.ndarray) -> np.ndarray:
        return x.reshape(-1)


class _Pool:
    def __init__(self, window: int, stride: int | None = None):
        if window < 1:
            raise ValueError(f"pool window must be >= 1, got {window}")
        self.window = int(window)
        self.stride = int(window if stride is None else stride)
        if self.stride < 1:
            raise ValueError(f"stride must be >= 1, got {stride}")

    def output_shape(self, in_shape):
        if len(in_shape) != 3:
            raise ValueError(f"pool expects (C, H, W), got {tuple(in_shape)}")
        c, h, w = in_shape
        if h < self.window or w < self.window:
            raise ValueError(f"pool window {self.window} exceeds input {tuple(in_shape)}")
        ho = (h - self.window) // self.stride + 1
        wo = (w - self.window) // self.stride + 1
        return (c, ho, wo)

    def windows(self, x: np.ndarray) -> np.ndarray:
        win = sliding_window_view(x, (self.window, self.window), axis=(1, 2))
        return win[:, :: self.stride, :: self.stride]


class MaxPool(_Pool):
    kind = "maxpool"

    def forward(self, x: np.ndarray) -> np.ndarray:
        return self.windows(x).max(axis=(-2, -1))


class AvgPool(_Pool):
    kind = "avgpool"

    def forward(self, x: np.ndarray) -> np.ndarray:
        return self.windows(x).mean(axis=(-2, -1))


Layer = Dense | Conv2D | ReLU | MaxPool | AvgPool | Flatten


class Network:
    """Ordered layer list with a declared input shape and class count.

    Construction walks the shape composition and rejects any layer whose
    declared shapes do not fit its predecessor; the final layer must be
    dense with out-dimension equal to ``num_classes``.
    """

    def __init__(self, layers, input_shape, num_classes: int):
        self.layers: tuple = tuple(layers)
        self.input_shape = tuple(int(d) for d in input_shape)
        self.num_classes = int(num_classes)
        if not self.layers:
            raise ValueError("network needs at least one layer")
        shapes = [self.input_shape]
        for i, layer in enumerate(self.layers):
            try:
                shapes.append(tuple(layer.output_shape(shapes[-1])))
            except ValueError as e:
                raise ShapeError(i, str(e)) from e
        final = self.layers[-1]
        if final.kind != "dense":
            raise ShapeError(len(self.layers) - 1, "final layer must be dense")
        if shapes[-1] != (self.num_classes,):
            raise ShapeError(
                len(self.layers) - 1,
                f"final layer emits {shapes[-1]}, expected ({self.num_classes},)",
            )
        # shapes[i] is the input shape of layer i; shapes[-1] the logits shape.
        self.layer_shapes: tuple = tuple(shapes)

    @property
    def penultimate_width(self) -> int:
        return self.layers[-1].in_dim

    def replace_final_dense(self, weights, bias) -> "Network":
        new_final = Dense(weights, bias)
        return Network(self.layers[:-1] + (new_final,), self.input_shape, self.num_classes)


@dataclass(frozen=True)
class ActivationTrace:
    """Inputs seen by each layer during one forward pass, plus the logits.

    ``per_layer_inputs[i]`` is the tensor fed to layer i;
    ``per_layer_inputs[-1]`` is the final logits vector.
    """

    per_layer_inputs: tuple


def forward(net: Network, x, trace: bool = False):
    """Run the network on one input; optionally keep the activation trace."""
    x = as_tensor(x)
    if x.shape != net.input_shape:
        raise ShapeError(-1, f"input shape {x.shape} != declared {net.input_shape}")
    inputs = [x]
    for i, layer in enumerate(net.layers):
        if x.shape != net.layer_shapes[i]:
            raise ShapeError(i, f"got {x.shape}, expected {net.layer_shapes[i]}")
        x = _freeze(layer.forward(x))
        inputs.append(x)
    logits = inputs[-1]
    if trace:
        return logits, ActivationTrace(per_layer_inputs=tuple(inputs))
    return logits


def predict_class(net: Network, x) -> tuple[int, np.ndarray]:
    """Class index of the largest logit (ties go to the lowest index)."""
    logits = forward(net, x)
    return int(np.argmax(logits)), logits
