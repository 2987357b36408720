"""A small trainable CNN built from the numpy kernels.

Every layer keeps its parameters in ``params`` and, after ``backward``, the
matching gradients in ``grads`` (same keys).
"""
from __future__ import annotations

import numpy as np

from .layer import (CpwcParams, Variant, count_cpwc, cpwc_backward, cpwc_forward_cached,
                    init_params, plan_groups)
from .tensor import conv2d, conv2d_backward, conv_output_size


class Layer:
    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}

    def forward(self, x, train=True):
        raise NotImplementedError

    def backward(self, grad):
        raise NotImplementedError

    def macs(self, hw):
        return 0, hw


class Conv2d(Layer):
    def __init__(self, cin, cout, kernel, rng, stride=1, dtype=np.float32):
        super().__init__()
        self.stride, self.padding = stride, kernel // 2
        fan_in = cin * kernel * kernel
        self.params["w"] = (rng.normal(size=(cout, cin, kernel, kernel))
                            * np.sqrt(2.0 / fan_in)).astype(dtype)

    def forward(self, x, train=True):
        self.x = x
        return conv2d(x, self.params["w"], self.stride, self.padding)

    def backward(self, grad):
        gx, self.grads["w"] = conv2d_backward(self.x, self.params["w"], grad,
                                              self.stride, self.padding)
        return gx

    def macs(self, hw):
        z, c, k, _ = self.params["w"].shape
        oh, ow = (conv_output_size(s, k, self.stride, self.padding) for s in hw)
        return oh * ow * z * c * k * k, (oh, ow)


class Cpwc(Layer):
    """CPWC node; the weight banks live in ``params`` under their bank names."""

    def __init__(self, cin, cout, variant, rng, stride=1, dtype=np.float32):
        super().__init__()
        self.plan = plan_groups(cin, cout)
        self.variant = Variant.parse(variant)
        self.stride = stride
        p = init_params(self.plan, self.variant, stride, seed=int(rng.integers(2 ** 31)))
        self.params = {k: v.astype(dtype) for k, v in p.banks().items()}

    def cpwc_params(self) -> CpwcParams:
        return CpwcParams(self.plan, self.variant, self.stride, **self.params)

    def forward(self, x, train=True):
        out, cache = cpwc_forward_cached(x, self.cpwc_params())
        self.x, self.cache = (x, cache) if train else (None, None)
        return out

    def backward(self, grad):
        gx, gp = cpwc_backward(self.x, self.cpwc_params(), grad, self.cache)
        self.grads = dict(gp.banks())
        return gx

    def macs(self, hw):
        oh, ow = ((s - 1) // self.stride + 1 for s in hw)
        return oh * ow * count_cpwc(self.plan.in_channels, self.plan.out_channels,
                                    self.variant), (oh, ow)


class BatchNorm2d(Layer):
    def __init__(self, channels, momentum=0.1, eps=1e-5, dtype=np.float32):
        super().__init__()
        self.params = {"gamma": np.ones(channels, dtype), "beta": np.zeros(channels, dtype)}
        self.running_mean = np.zeros(channels, dtype)
        self.running_var = np.ones(channels, dtype)
        self.momentum, self.eps = momentum, eps

    def forward(self, x, train=True):
        if train:
            mean = x.mean(axis=(0, 2, 3))
            var = x.var(axis=(0, 2, 3))
            m = x.size // x.shape[1]
            self.running_mean = ((1 - self.momentum) * self.running_mean
                                 + self.momentum * mean).astype(x.dtype)
            self.running_var = ((1 - self.momentum) * self.running_var
                                + self.momentum * var * m / max(m - 1, 1)).astype(x.dtype)
        else:
            mean, var = self.running_mean, self.running_var
        self.inv_std = 1.0 / np.sqrt(var + self.eps)
        self.xhat = (x - mean[None, :, None, None]) * self.inv_std[None, :, None, None]
        return (self.params["gamma"][None, :, None, None] * self.xhat
                + self.params["beta"][None, :, None, None])

    def backward(self, grad):
        xhat = self.xhat
        self.grads["gamma"] = (grad * xhat).sum(axis=(0, 2, 3))
        self.grads["beta"] = grad.sum(axis=(0, 2, 3))
        g = grad * self.params["gamma"][None, :, None, None]
        mean_g = g.mean(axis=(0, 2, 3), keepdims=True)
        mean_gx = (g * xhat).mean(axis=(0, 2, 3), keepdims=True)
        return (g - mean_g - xhat * mean_gx) * self.inv_std[None, :, None, None]


class ReLU(Layer):
    def forward(self, x, train=True):
        self.mask = x > 0
        return x * self.mask

    def backward(self, grad):
        return grad * self.mask


class GlobalAvgPool(Layer):
    def forward(self, x, train=True):
        self.shape = x.shape
        return x.mean(axis=(2, 3))

    def backward(self, grad):
        n, c, h, w = self.shape
        return np.broadcast_to(grad[:, :, None, None] / (h * w), self.shape).copy()

    def macs(self, hw):
        return 0, (1, 1)


class Linear(Layer):
    def __init__(self, cin, cout, rng, dtype=np.float32):
        super().__init__()
        self.params = {"w": (rng.normal(size=(cout, cin)) / np.sqrt(cin)).astype(dtype),
                       "b": np.zeros(cout, dtype)}

    def forward(self, x, train=True):
        self.x = x
        return x @ self.params["w"].T + self.params["b"]

    def backward(self, grad):
        self.grads["w"] = grad.T @ self.x
        self.grads["b"] = grad.sum(axis=0)
        return grad @ self.params["w"]

    def macs(self, hw):
        return self.params["w"].size, hw


class Model:
    def __init__(self, layers, variant=None):
        self.layers = list(layers)
        self.variant = variant

    def forward(self, x, train=True):
        for layer in self.layers:
            x = layer.forward(x, train)
        return x

    __call__ = forward

    def backward(self, grad):
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        return grad

    def named_params(self):
        for i, layer in enumerate(self.layers):
            for k, v in layer.params.items():
                yield f"{i}.{type(layer).__name__}.{k}", layer, k

    def num_params(self) -> int:
        return sum(layer.params[k].size for _, layer, k in self.named_params())

    def macs(self, hw) -> int:
        total = 0
        for layer in self.layers:
            m, hw = layer.macs(hw)
            total += m
        return total

    def cpwc_layers(self) -> list[Cpwc]:
        return [layer for layer in self.layers if isinstance(layer, Cpwc)]


def block_widths(channels: int, blocks: int) -> list[int]:
    """Channel widths between blocks: c, 2c, c, 2c, ..."""
    return [channels * (2 if i % 2 else 1) for i in range(blocks + 1)]


def build_toy_model(variant=Variant.FULL, channels: int = 8, classes: int = 4,
                    blocks: int = 2, in_channels: int = 1, stem_kernel: int = 1,
                    seed: int = 0, precision: str = "single") -> Model:
    """Stem conv, ``blocks`` x (CPWC -> batch norm -> ReLU), global pool, fc.

    The stem defaults to a 1x1 kernel so that spatial context enters the
    network only through the CPWC nodes. Blocks alternate between widening
    to ``2 * channels`` and reducing back, so the stage-1 grouping exercises
    both the Z > C and Z < C cases.
    """
    if channels < 4:
        raise ValueError("channels must be >= 4")
    if not 2 <= blocks <= 4:
        raise ValueError("blocks must be between 2 and 4")
    variant = Variant.parse(variant)
    dtype = np.float64 if precision == "double" else np.float32
    rng = np.random.default_rng(seed)
    widths = block_widths(channels, blocks)
    layers: list[Layer] = [Conv2d(in_channels, channels, stem_kernel, rng, dtype=dtype),
                           BatchNorm2d(channels, dtype=dtype), ReLU()]
    for cin, cout in zip(widths, widths[1:]):
        layers += [Cpwc(cin, cout, variant, rng, dtype=dtype), BatchNorm2d(cout, dtype=dtype),
                   ReLU()]
    layers += [GlobalAvgPool(), Linear(widths[-1], classes, rng, dtype=dtype)]
    return Model(layers, variant)
