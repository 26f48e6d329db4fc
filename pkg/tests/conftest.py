"""Shared test helpers: independent oracles and small net builders.

The oracles here implement the checked math directly (explicit loops,
unrolled matrices) and stay independent of the library code paths they
verify.
"""

import numpy as np
import pytest

from xai_triage.nn import AvgPool, Conv2D, Dense, Flatten, MaxPool, Network, ReLU


# ---------------------------------------------------------------- builders

def identity_dense_net(n: int) -> Network:
    return Network([Dense(np.eye(n), np.zeros(n))], (n,), n)


def random_positive_net(rng, input_shape, depth_choices=("dense", "conv", "avgpool", "relu")):
    """Random bias-free net with strictly positive weights and inputs.

    Guarantees positive activations everywhere, so plain-rule relevance
    denominators never vanish.
    """
    layers = []
    shape = tuple(input_shape)
    n_hidden = int(rng.integers(1, 4))
    for _ in range(n_hidden):
        kind = rng.choice([k for k in depth_choices if _kind_fits(k, shape)])
        if kind == "dense":
            if len(shape) != 1:
                layers.append(Flatten())
                shape = (int(np.prod(shape)),)
            out = int(rng.integers(2, 7))
            layers.append(Dense(rng.uniform(0.1, 1.0, (out, shape[0]))))
            shape = (out,)
        elif kind == "conv":
            c_out = int(rng.integers(1, 4))
            k = int(rng.integers(1, min(shape[1], shape[2], 3) + 1))
            layers.append(Conv2D(rng.uniform(0.1, 1.0, (c_out, shape[0], k, k))))
            shape = layers[-1].output_shape(shape)
        elif kind == "avgpool":
            layers.append(AvgPool(2))
            shape = layers[-1].output_shape(shape)
        else:
            layers.append(ReLU())
    if len(shape) != 1:
        layers.append(Flatten())
        shape = (int(np.prod(shape)),)
    num_classes = int(rng.integers(2, 5))
    layers.append(Dense(rng.uniform(0.1, 1.0, (num_classes, shape[0]))))
    return Network(layers, input_shape, num_classes)


def _kind_fits(kind, shape):
    if kind in ("dense", "relu"):
        return True
    if kind == "conv":
        return len(shape) == 3
    if kind == "avgpool":
        return len(shape) == 3 and shape[1] >= 2 and shape[2] >= 2
    return False


# ---------------------------------------------------------------- oracles

def conv_forward_oracle(x, w, b, stride, pad):
    """Direct convolution: explicit loops over every output element."""
    c_in, h, wd = x.shape
    c_out, _, kh, kw = w.shape
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (wd + 2 * pad - kw) // stride + 1
    out = np.zeros((c_out, ho, wo))
    for o in range(c_out):
        for a in range(ho):
            for bcol in range(wo):
                acc = b[o]
                for ci in range(c_in):
                    for i in range(kh):
                        for j in range(kw):
                            yy = a * stride + i - pad
                            xx = bcol * stride + j - pad
                            if 0 <= yy < h and 0 <= xx < wd:
                                acc += x[ci, yy, xx] * w[o, ci, i, j]
                out[o, a, bcol] = acc
    return out


def conv_as_matrix(layer, in_shape):
    """Unroll a conv layer to an equivalent dense (matrix, bias) pair."""
    c, h, wd = in_shape
    o_ch, c_in, kh, kw = layer.weights.shape
    s, p = layer.stride, layer.padding
    ho = (h + 2 * p - kh) // s + 1
    wo = (wd + 2 * p - kw) // s + 1
    mat = np.zeros((o_ch * ho * wo, c * h * wd))
    bias = np.zeros(o_ch * ho * wo)
    for o in range(o_ch):
        for a in range(ho):
            for bcol in range(wo):
                oi = (o * ho + a) * wo + bcol
                bias[oi] = layer.bias[o]
                for ci in range(c_in):
                    for i in range(kh):
                        for j in range(kw):
                            yy = a * s + i - p
                            xx = bcol * s + j - p
                            if 0 <= yy < h and 0 <= xx < wd:
                                mat[oi, (ci * h + yy) * wd + xx] += layer.weights[o, ci, i, j]
    return mat, bias


def avgpool_as_matrix(layer, in_shape):
    c, h, wd = in_shape
    k, s = layer.window, layer.stride
    ho = (h - k) // s + 1
    wo = (wd - k) // s + 1
    mat = np.zeros((c * ho * wo, c * h * wd))
    for ci in range(c):
        for a in range(ho):
            for bcol in range(wo):
                oi = (ci * ho + a) * wo + bcol
                for i in range(k):
                    for j in range(k):
                        mat[oi, (ci * h + a * s + i) * wd + bcol * s + j] = 1.0 / (k * k)
    return mat, np.zeros(c * ho * wo)


def lrp_oracle(net, x, target_class):
    """Direct proportional-redistribution oracle on unrolled matrices.

    Forward and backward both use explicit loops; relu layers gate,
    linear layers redistribute R_j = sum_k z_jk / (sum_j z_jk + b_k) R_k
    with the bias share absorbed.  Supports dense, conv2d, avgpool,
    flatten, relu.
    """
    steps = []  # ("lin", mat, bias) or ("relu",)
    shape = net.input_shape
    for layer in net.layers:
        if layer.kind == "dense":
            steps.append(("lin", np.array(layer.weights), np.array(layer.bias)))
            shape = (layer.out_dim,)
        elif layer.kind == "conv2d":
            mat, bias = conv_as_matrix(layer, shape)
            steps.append(("lin", mat, bias))
            shape = layer.output_shape(shape)
        elif layer.kind == "avgpool":
            mat, bias = avgpool_as_matrix(layer, shape)
            steps.append(("lin", mat, bias))
            shape = layer.output_shape(shape)
        elif layer.kind == "flatten":
            shape = (int(np.prod(shape)),)
            steps.append(("noop",))
        elif layer.kind == "relu":
            steps.append(("relu",))
        else:
            raise AssertionError(f"oracle does not support {layer.kind}")

    acts = [np.asarray(x, dtype=np.float64).ravel()]
    for step in steps:
        a = acts[-1]
        if step[0] == "lin":
            _, mat, bias = step
            nxt = np.zeros(mat.shape[0])
            for k in range(mat.shape[0]):
                acc = bias[k]
                for j in range(mat.shape[1]):
                    acc += mat[k, j] * a[j]
                nxt[k] = acc
            acts.append(nxt)
        elif step[0] == "relu":
            acts.append(np.where(a > 0, a, 0.0))
        else:
            acts.append(a.copy())

    logits = acts[-1]
    rel = np.zeros(len(logits))
    rel[target_class] = logits[target_class]
    for idx in range(len(steps) - 1, -1, -1):
        step = steps[idx]
        a = acts[idx]
        if step[0] == "lin":
            _, mat, bias = step
            lower = np.zeros(mat.shape[1])
            for k in range(mat.shape[0]):
                if rel[k] == 0.0:
                    continue
                denom = bias[k]
                for j in range(mat.shape[1]):
                    denom += mat[k, j] * a[j]
                assert denom != 0.0, "oracle hit a vanishing denominator"
                for j in range(mat.shape[1]):
                    lower[j] += mat[k, j] * a[j] / denom * rel[k]
            rel = lower
        elif step[0] == "relu":
            rel = np.where(a > 0, rel, 0.0)
    return rel.reshape(net.input_shape)


def accuracy_tally_oracle(labels, preds):
    """Hand confusion tally: per-class accuracy dict + unweighted mean."""
    per = {}
    for c in sorted(set(labels)):
        hits = sum(1 for y, p in zip(labels, preds) if y == c and p == c)
        per[c] = hits / labels.count(c)
    mean = sum(per.values()) / len(per)
    return per, mean


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
