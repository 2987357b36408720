"""Dense NCHW tensors and convolution kernels.

Tensors are plain ``numpy.ndarray`` objects with four axes
(batch, channels, height, width) and a float32 or float64 dtype.
:func:`conv2d_oracle` is the slow, direct sum-of-products reference that every
fast kernel in the package is tested against.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

PRECISIONS = {"single": np.float32, "double": np.float64}


def as_tensor(x, precision: str | None = None) -> np.ndarray:
    """Validate ``x`` as an NCHW tensor, optionally casting to a precision."""
    arr = np.asarray(x)
    if precision is not None:
        arr = arr.astype(PRECISIONS[precision], copy=False)
    elif arr.dtype not in (np.float32, np.float64):
        arr = arr.astype(np.float64)
    if arr.ndim != 4:
        raise ValueError(f"expected a 4-d NCHW tensor, got shape {arr.shape}")
    if min(arr.shape) < 1:
        raise ValueError(f"all shape components must be >= 1, got {arr.shape}")
    return arr


def precision_of(x: np.ndarray) -> str:
    return "double" if x.dtype == np.float64 else "single"


def conv_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - kernel) // stride + 1


@dataclass(frozen=True)
class ConvFilterBank:
    """A bank of filters, each reading an explicit list of input channels.

    ``channels[f]`` lists the input channels read by filter ``f`` and
    ``weights[f]`` has shape ``(len(channels[f]), kh, kw)``. Lists may overlap
    between filters; a dense convolution lists every channel in every filter.
    """

    channels: tuple[tuple[int, ...], ...]
    weights: tuple[np.ndarray, ...]

    def __post_init__(self):
        if len(self.channels) != len(self.weights):
            raise ValueError("one weight block is required per filter")
        if not self.channels:
            raise ValueError("a filter bank needs at least one filter")
        shapes = {w.shape[1:] for w in self.weights}
        if len(shapes) != 1:
            raise ValueError(f"filters disagree on kernel size: {sorted(shapes)}")
        for f, (ch, w) in enumerate(zip(self.channels, self.weights)):
            if w.ndim != 3 or w.shape[0] != len(ch):
                raise ValueError(
                    f"filter {f}: weights {w.shape} do not match {len(ch)} listed channels"
                )
            if any(c < 0 for c in ch):
                raise ValueError(f"filter {f}: negative channel index")

    @property
    def count(self) -> int:
        return len(self.channels)

    @property
    def kernel(self) -> tuple[int, int]:
        return self.weights[0].shape[1:]

    @classmethod
    def dense(cls, weights: np.ndarray) -> "ConvFilterBank":
        """Bank for a dense ``(out, in, kh, kw)`` weight array."""
        weights = np.asarray(weights)
        chans = tuple(range(weights.shape[1]))
        return cls(tuple(chans for _ in range(weights.shape[0])), tuple(weights))

    @classmethod
    def from_lists(cls, channels: Sequence[Sequence[int]], weights) -> "ConvFilterBank":
        return cls(
            tuple(tuple(int(c) for c in ch) for ch in channels),
            tuple(np.asarray(w) for w in weights),
        )


def conv2d_oracle(x, bank: ConvFilterBank, stride: int = 1, padding: int = 0) -> np.ndarray:
    """Direct convolution: every output value is an explicit window sum.

    Zero padding, no bias. Deliberately unoptimized; this is the reference.
    """
    x = as_tensor(x)
    if stride < 1:
        raise ValueError(f"stride must be positive, got {stride}")
    if padding < 0:
        raise ValueError(f"padding must be non-negative, got {padding}")
    n, c, h, w = x.shape
    top = max(max(ch) for ch in bank.channels)
    if top >= c:
        raise ValueError(f"filter bank reads channel {top} but input has {c} channels")
    kh, kw = bank.kernel
    oh = conv_output_size(h, kh, stride, padding)
    ow = conv_output_size(w, kw, stride, padding)
    if oh < 1 or ow < 1:
        raise ValueError("kernel larger than padded input")

    xp = np.zeros((n, c, h + 2 * padding, w + 2 * padding), dtype=x.dtype)
    xp[:, :, padding:padding + h, padding:padding + w] = x
    out = np.zeros((n, bank.count, oh, ow), dtype=x.dtype)
    for f, (chans, wf) in enumerate(zip(bank.channels, bank.weights)):
        wf = wf.astype(x.dtype)
        sel = xp[:, list(chans)]
        for i in range(oh):
            for j in range(ow):
                win = sel[:, :, i * stride:i * stride + kh, j * stride:j * stride + kw]
                out[:, f, i, j] = (win * wf).sum(axis=(1, 2, 3))
    return out


def add_elementwise(a, b) -> np.ndarray:
    a = as_tensor(a)
    b = as_tensor(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a + b


# Fast kernels. Each loops over kernel offsets and does the channel work with
# whole-array numpy ops, so the result only differs from the oracle by
# floating-point reassociation.

def _pad(x: np.ndarray, padding: int) -> np.ndarray:
    if padding == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))


def _window(xp: np.ndarray, a: int, b: int, oh: int, ow: int, stride: int) -> np.ndarray:
    return xp[:, :, a:a + stride * (oh - 1) + 1:stride, b:b + stride * (ow - 1) + 1:stride]


def conv2d(x: np.ndarray, weight: np.ndarray, stride: int = 1, padding: int = 0) -> np.ndarray:
    """Dense convolution with an ``(out, in, kh, kw)`` weight array."""
    n, c, h, w = x.shape
    z, cw, kh, kw = weight.shape
    if cw != c:
        raise ValueError(f"weight expects {cw} input channels, input has {c}")
    oh = conv_output_size(h, kh, stride, padding)
    ow = conv_output_size(w, kw, stride, padding)
    xp = _pad(x, padding)
    out = np.zeros((n, z, oh, ow), dtype=x.dtype)
    for a in range(kh):
        for b in range(kw):
            out += np.einsum("zc,nchw->nzhw", weight[:, :, a, b], _window(xp, a, b, oh, ow, stride),
                             optimize=True)
    return out


def conv2d_backward(x, weight, grad_out, stride: int = 1, padding: int = 0):
    """Gradients of :func:`conv2d` with respect to input and weight."""
    n, c, h, w = x.shape
    z, _, kh, kw = weight.shape
    oh, ow = grad_out.shape[2:]
    xp = _pad(x, padding)
    gxp = np.zeros_like(xp)
    gw = np.zeros_like(weight)
    for a in range(kh):
        for b in range(kw):
            win = _window(xp, a, b, oh, ow, stride)
            gw[:, :, a, b] = np.einsum("nzhw,nchw->zc", grad_out, win, optimize=True)
            _window(gxp, a, b, oh, ow, stride)[...] += np.einsum(
                "zc,nzhw->nchw", weight[:, :, a, b], grad_out, optimize=True)
    gx = gxp[:, :, padding:padding + h, padding:padding + w] if padding else gxp
    return gx, gw


def depthwise_conv2d(x: np.ndarray, weight: np.ndarray, stride: int = 1,
                     padding: int = 0) -> np.ndarray:
    """Per-channel convolution with a ``(channels, kh, kw)`` weight array."""
    n, c, h, w = x.shape
    cw, kh, kw = weight.shape
    if cw != c:
        raise ValueError(f"weight has {cw} channels, input has {c}")
    oh = conv_output_size(h, kh, stride, padding)
    ow = conv_output_size(w, kw, stride, padding)
    xp = _pad(x, padding)
    out = np.zeros((n, c, oh, ow), dtype=x.dtype)
    for a in range(kh):
        for b in range(kw):
            out += weight[None, :, a, b, None, None] * _window(xp, a, b, oh, ow, stride)
    return out


def depthwise_conv2d_backward(x, weight, grad_out, stride: int = 1, padding: int = 0):
    n, c, h, w = x.shape
    _, kh, kw = weight.shape
    oh, ow = grad_out.shape[2:]
    xp = _pad(x, padding)
    gxp = np.zeros_like(xp)
    gw = np.zeros_like(weight)
    for a in range(kh):
        for b in range(kw):
            win = _window(xp, a, b, oh, ow, stride)
            gw[:, a, b] = (grad_out * win).sum(axis=(0, 2, 3))
            _window(gxp, a, b, oh, ow, stride)[...] += weight[None, :, a, b, None, None] * grad_out
    gx = gxp[:, :, padding:padding + h, padding:padding + w] if padding else gxp
    return gx, gw
