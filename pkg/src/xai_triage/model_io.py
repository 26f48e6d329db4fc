"""Model file format: text header + little-endian float32 weight block.

The header is self-describing ASCII (one line per layer, diffable); the
weight block holds each layer's weights then bias, row-major, in layer
order.  Weights are float32 on disk and float32-exact in memory, so
``load_model(save_model(net))`` reproduces the network bit-exactly.
"""

from __future__ import annotations

import io
from pathlib import Path

import numpy as np

from .errors import ModelFormatError, ModelValidationError, ShapeError
from .nn import AvgPool, Conv2D, Dense, Flatten, MaxPool, Network, ReLU

MAGIC = "xai-triage-model 1"

__all__ = ["save_model", "load_model", "MAGIC"]


def _layer_header(layer) -> str:
    k = layer.kind
    if k == "dense":
        return f"layer dense in {layer.in_dim} out {layer.out_dim}"
    if k == "conv2d":
        return (
            f"layer conv2d in {layer.in_channels} out {layer.out_channels} "
            f"kernel {layer.kh} {layer.kw} stride {layer.stride} padding {layer.padding}"
        )
    if k in ("maxpool", "avgpool"):
        return f"layer {k} window {layer.window} stride {layer.stride}"
    return f"layer {k}"


def _layer_params(layer):
    if layer.kind in ("dense", "conv2d"):
        return [layer.weights, layer.bias]
    return []


def save_model(net: Network, sink) -> None:
    """Write ``net`` to a path or binary file-like object."""
    lines = [MAGIC]
    lines.append("input_shape " + " ".join(str(d) for d in net.input_shape))
    lines.append(f"num_classes {net.num_classes}")
    lines.append(f"layers {len(net.layers)}")
    lines.extend(_layer_header(l) for l in net.layers)
    lines.append("end")
    header = ("\n".join(lines) + "\n").encode("ascii")

    blob = io.BytesIO()
    blob.write(header)
    for layer in net.layers:
        for arr in _layer_params(layer):
            blob.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    data = blob.getvalue()

    if hasattr(sink, "write"):
        sink.write(data)
    else:
        Path(sink).write_bytes(data)


class _HeaderReader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def line(self) -> tuple[str, int]:
        """Next header line and the byte offset it started at."""
        start = self.pos
        nl = self.buf.find(b"\n", start)
        if nl == -1:
            raise ModelFormatError(start, "unexpected end of file inside header")
        raw = self.buf[start:nl]
        self.pos = nl + 1
        try:
            return raw.decode("ascii"), start
        except UnicodeDecodeError as e:
            raise ModelFormatError(start, "header is not ASCII") from e


def _ints(tokens, n, offset, what):
    if len(tokens) != n:
        raise ModelFormatError(offset, f"{what}: expected {n} fields, got {len(tokens)}")
    try:
        return [int(t) for t in tokens]
    except ValueError as e:
        raise ModelFormatError(offset, f"{what}: non-integer field") from e


def _parse_layer_line(line: str, offset: int):
    tokens = line.split()
    if len(tokens) < 2 or tokens[0] != "layer":
        raise ModelFormatError(offset, f"expected a 'layer' line, got {line!r}")
    kind, rest = tokens[1], tokens[2:]
    if kind == "dense":
        if len(rest) != 4 or rest[0] != "in" or rest[2] != "out":
            raise ModelFormatError(offset, "dense layer: expected 'in N out M'")
        in_dim, out_dim = _ints([rest[1], rest[3]], 2, offset, "dense layer")
        return ("dense", {"in": in_dim, "out": out_dim})
    if kind == "conv2d":
        want = ["in", None, "out", None, "kernel", None, None, "stride", None, "padding", None]
        if len(rest) != len(want) or any(
            w is not None and rest[i] != w for i, w in enumerate(want)
        ):
            raise ModelFormatError(
                offset, "conv2d layer: expected 'in I out O kernel KH KW stride S padding P'"
            )
        in_ch, out_ch, kh, kw, s, p = _ints(
            [rest[1], rest[3], rest[5], rest[6], rest[8], rest[10]], 6, offset, "conv2d layer"
        )
        return ("conv2d", {"in": in_ch, "out": out_ch, "kh": kh, "kw": kw, "stride": s, "padding": p})
    if kind in ("maxpool", "avgpool"):
        if len(rest) != 4 or rest[0] != "window" or rest[2] != "stride":
            raise ModelFormatError(offset, f"{kind} layer: expected 'window W stride S'")
        window, stride = _ints([rest[1], rest[3]], 2, offset, f"{kind} layer")
        return (kind, {"window": window, "stride": stride})
    if kind in ("relu", "flatten"):
        if rest:
            raise ModelFormatError(offset, f"{kind} layer takes no fields")
        return (kind, {})
    raise ModelFormatError(offset, f"unknown layer kind {kind!r}")


def _param_count(kind: str, h: dict) -> int:
    if kind == "dense":
        return h["in"] * h["out"] + h["out"]
    if kind == "conv2d":
        return h["out"] * h["in"] * h["kh"] * h["kw"] + h["out"]
    return 0


def load_model(source) -> Network:
    """Read a network from a path, binary file-like object, or bytes."""
    if isinstance(source, (bytes, bytearray)):
        buf = bytes(source)
    elif hasattr(source, "read"):
        buf = source.read()
    else:
        buf = Path(source).read_bytes()

    r = _HeaderReader(buf)
    line, off = r.line()
    if line != MAGIC:
        raise ModelFormatError(off, f"bad magic line {line!r}")

    line, off = r.line()
    tokens = line.split()
    if tokens[0:1] != ["input_shape"] or len(tokens) < 2:
        raise ModelFormatError(off, "expected 'input_shape D...'")
    input_shape = _ints(tokens[1:], len(tokens) - 1, off, "input_shape")

    line, off = r.line()
    tokens = line.split()
    if tokens[0:1] != ["num_classes"]:
        raise ModelFormatError(off, "expected 'num_classes N'")
    (num_classes,) = _ints(tokens[1:], 1, off, "num_classes")

    line, off = r.line()
    tokens = line.split()
    if tokens[0:1] != ["layers"]:
        raise ModelFormatError(off, "expected 'layers N'")
    (n_layers,) = _ints(tokens[1:], 1, off, "layers")
    if n_layers < 1:
        raise ModelFormatError(off, "layer count must be >= 1")

    specs = []
    for _ in range(n_layers):
        line, off = r.line()
        specs.append(_parse_layer_line(line, off))

    line, off = r.line()
    if line != "end":
        raise ModelFormatError(off, f"expected 'end', got {line!r}")

    expected = sum(_param_count(k, h) for k, h in specs)
    avail = len(buf) - r.pos
    if avail < expected * 4:
        raise ModelFormatError(
            len(buf), f"weight block truncated: need {expected * 4} bytes, have {avail}"
        )
    if avail > expected * 4:
        raise ModelFormatError(
            r.pos + expected * 4, f"{avail - expected * 4} trailing bytes after weight block"
        )
    values = np.frombuffer(buf, dtype="<f4", count=expected, offset=r.pos).astype(np.float64)
    if not np.all(np.isfinite(values)):
        raise ModelValidationError("weight block contains NaN or Inf")

    layers = []
    cursor = 0
    try:
        for kind, h in specs:
            if kind == "dense":
                n_w = h["in"] * h["out"]
                w = values[cursor : cursor + n_w].reshape(h["out"], h["in"])
                b = values[cursor + n_w : cursor + n_w + h["out"]]
                cursor += n_w + h["out"]
                layers.append(Dense(w, b))
            elif kind == "conv2d":
                n_w = h["out"] * h["in"] * h["kh"] * h["kw"]
                w = values[cursor : cursor + n_w].reshape(h["out"], h["in"], h["kh"], h["kw"])
                b = values[cursor + n_w : cursor + n_w + h["out"]]
                cursor += n_w + h["out"]
                layers.append(Conv2D(w, b, stride=h["stride"], padding=h["padding"]))
            elif kind == "maxpool":
                layers.append(MaxPool(h["window"], h["stride"]))
            elif kind == "avgpool":
                layers.append(AvgPool(h["window"], h["stride"]))
            elif kind == "relu":
                layers.append(ReLU())
            else:
                layers.append(Flatten())
        return Network(layers, input_shape, num_classes)
    except (ValueError, ShapeError) as e:
        raise ModelValidationError(str(e)) from e
