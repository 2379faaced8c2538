"""Parameterised layers: thin wrappers pairing weight tensors with kernels.

Initialisation is fan-in uniform for projections and convolutions (zero
biases) and plain uniform for LSTM matrices, all drawn from an explicit
numpy Generator so that model construction is fully seed-determined.
"""

from __future__ import annotations

import numpy as np

from . import ops
from .tensor import Tensor


def fan_in_uniform(rng, shape, fan_in, dtype):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Linear:
    def __init__(self, d_in, d_out, rng, bias=True, dtype=np.float32):
        self.w = Tensor(fan_in_uniform(rng, (d_in, d_out), d_in, dtype), requires_grad=True)
        self.b = Tensor(np.zeros(d_out, dtype=dtype), requires_grad=True) if bias else None

    def __call__(self, x):
        return ops.linear(x, self.w, self.b)

    def params(self):
        yield "w", self.w
        if self.b is not None:
            yield "b", self.b


class Conv1d:
    def __init__(self, c_in, c_out, kernel, rng, dtype=np.float32):
        self.w = Tensor(fan_in_uniform(rng, (c_out, c_in, kernel), c_in * kernel, dtype),
                        requires_grad=True)
        self.b = Tensor(np.zeros(c_out, dtype=dtype), requires_grad=True)

    def __call__(self, x):
        return ops.conv1d(x, self.w, self.b)

    def params(self):
        yield "w", self.w
        yield "b", self.b


class Conv2d:
    def __init__(self, c_in, c_out, kernel, rng, dtype=np.float32):
        kh, kw = kernel if isinstance(kernel, tuple) else (kernel, kernel)
        self.w = Tensor(fan_in_uniform(rng, (c_out, c_in, kh, kw), c_in * kh * kw, dtype),
                        requires_grad=True)
        self.b = Tensor(np.zeros(c_out, dtype=dtype), requires_grad=True)

    def __call__(self, x):
        return ops.conv2d(x, self.w, self.b)

    def params(self):
        yield "w", self.w
        yield "b", self.b


class LayerNorm:
    def __init__(self, dim, dtype=np.float32):
        self.gamma = Tensor(np.ones(dim, dtype=dtype), requires_grad=True)
        self.beta = Tensor(np.zeros(dim, dtype=dtype), requires_grad=True)

    def __call__(self, x):
        return ops.layer_norm(x, self.gamma, self.beta)

    def params(self):
        yield "gamma", self.gamma
        yield "beta", self.beta


class LSTM:
    """One unidirectional LSTM layer, zero initial state."""

    def __init__(self, d_in, d_hidden, rng, dtype=np.float32):
        bound_init = lambda shape: rng.uniform(-1.0 / np.sqrt(d_hidden),
                                               1.0 / np.sqrt(d_hidden), shape).astype(dtype)
        self.wx = Tensor(bound_init((d_in, 4 * d_hidden)), requires_grad=True)
        self.wh = Tensor(bound_init((d_hidden, 4 * d_hidden)), requires_grad=True)
        self.b = Tensor(bound_init((4 * d_hidden,)), requires_grad=True)

    def __call__(self, x):
        return ops.lstm_sequence(x, self.wx, self.wh, self.b)

    def params(self):
        yield "wx", self.wx
        yield "wh", self.wh
        yield "b", self.b


class StackedLSTM:
    def __init__(self, d_in, d_hidden, depth, rng, dtype=np.float32):
        self.layers = []
        for i in range(depth):
            self.layers.append(LSTM(d_in if i == 0 else d_hidden, d_hidden, rng, dtype))

    def __call__(self, x):
        for layer in self.layers:
            x = layer(x)
        return x

    def params(self):
        for i, layer in enumerate(self.layers):
            for name, p in layer.params():
                yield f"layer{i}.{name}", p


def collect_params(named_children):
    """Flatten (prefix, layer) pairs into dotted parameter names."""
    out = []
    for prefix, child in named_children:
        for name, p in child.params():
            out.append((f"{prefix}.{name}", p))
    return out
