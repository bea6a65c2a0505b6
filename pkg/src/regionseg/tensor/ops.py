"""Differentiable primitives used by the U-Net.

Only the configurations the network needs are supported: 3x3x3 convolution
with zero padding 1 and stride 1, 2x2x2 stride-2 transposed convolution,
2x2x2 stride-2 max pooling, 1x1x1 convolution, batch normalization, ReLU,
channel softmax and channel concatenation.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import DegenerateBatch, OddSpatialDim, ShapeMismatch
from . import backend
from .core import Tensor, as_tensor, make_result


def _check5(x: Tensor, what: str) -> None:
    if x.ndim != 5:
        raise ShapeMismatch(f"{what}: expected a 5-D (b, c, x, y, z) tensor, got shape {x.shape}")


def conv3d(x: Tensor, weight: Tensor, bias: Tensor | None = None, padding: int = 1) -> Tensor:
    """3x3x3 cross-correlation, zero padding 1, stride 1."""
    _check5(x, "conv3d")
    if padding != 1:
        raise ValueError("conv3d supports padding=1 only")
    if weight.shape[2:] != (3, 3, 3) or weight.ndim != 5:
        raise ShapeMismatch(f"conv3d: weight must be (cout, cin, 3, 3, 3), got {weight.shape}")
    if weight.shape[1] != x.shape[1]:
        raise ShapeMismatch(f"conv3d: input has {x.shape[1]} channels, weight expects {weight.shape[1]}")
    if bias is not None and bias.shape != (weight.shape[0],):
        raise ShapeMismatch(f"conv3d: bias shape {bias.shape} != ({weight.shape[0]},)")

    k = backend.kernels
    out = k.conv3x3_forward(x.data, weight.data, None if bias is None else bias.data)

    def backward(g):
        gx = gw = gb = None
        if x.requires_grad or x.node is not None:
            gx = backend.kernels.conv3x3_backward_input(g, weight.data)
        if weight.requires_grad:
            gw = backend.kernels.conv3x3_backward_weight(x.data, np.ascontiguousarray(g))
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 2, 3, 4))
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make_result(out, parents, backward)


def pointwise_conv3d(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """1x1x1 convolution; weight is (cout, cin)."""
    _check5(x, "pointwise_conv3d")
    if weight.ndim != 2 or weight.shape[1] != x.shape[1]:
        raise ShapeMismatch(f"pointwise_conv3d: weight {weight.shape} vs input channels {x.shape[1]}")
    n, c, X, Y, Z = x.shape
    xf = x.data.reshape(n, c, -1)
    out = np.einsum("oc,ncv->nov", weight.data, xf)
    if bias is not None:
        out += bias.data[None, :, None]
    out = out.reshape(n, -1, X, Y, Z)

    def backward(g):
        gf = g.reshape(n, g.shape[1], -1)
        gx = np.einsum("oc,nov->ncv", weight.data, gf).reshape(x.shape)
        gw = np.einsum("nov,ncv->oc", gf, xf)
        gb = gf.sum(axis=(0, 2)) if bias is not None else None
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make_result(out, parents, backward)


def transposed_conv3d(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """2x2x2 stride-2 transposed convolution; weight is (cin, cout, 2, 2, 2).

    Output spatial dims are exactly twice the input's.
    """
    _check5(x, "transposed_conv3d")
    if weight.ndim != 5 or weight.shape[2:] != (2, 2, 2) or weight.shape[0] != x.shape[1]:
        raise ShapeMismatch(f"transposed_conv3d: weight {weight.shape} vs input {x.shape}")
    n, cin, X, Y, Z = x.shape
    cout = weight.shape[1]
    wm = weight.data.reshape(cin, cout * 8)
    xf = x.data.reshape(n, cin, -1)
    # (n, cout*8, V) -> (n, cout, 2, 2, 2, X, Y, Z) -> interleave
    y = np.einsum("ck,ncv->nkv", wm, xf).reshape(n, cout, 2, 2, 2, X, Y, Z)
    out = y.transpose(0, 1, 5, 2, 6, 3, 7, 4).reshape(n, cout, 2 * X, 2 * Y, 2 * Z)
    if bias is not None:
        out = out + bias.data[None, :, None, None, None]

    def backward(g):
        gr = (g.reshape(n, cout, X, 2, Y, 2, Z, 2)
              .transpose(0, 1, 3, 5, 7, 2, 4, 6)
              .reshape(n, cout * 8, -1))
        gx = np.einsum("ck,nkv->ncv", wm, gr).reshape(x.shape)
        gw = np.einsum("ncv,nkv->ck", xf, gr).reshape(weight.shape)
        gb = g.sum(axis=(0, 2, 3, 4)) if bias is not None else None
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make_result(np.ascontiguousarray(out), parents, backward)


def maxpool3d(x: Tensor) -> tuple[Tensor, np.ndarray]:
    """2x2x2 stride-2 max pooling. Returns the pooled tensor and, per output
    element, the flat index of the selected input element (ties resolve to
    the lowest index)."""
    _check5(x, "maxpool3d")
    if any(s % 2 for s in x.shape[2:]):
        raise OddSpatialDim(f"maxpool3d needs even spatial dims, got {x.shape[2:]}")
    out, idx = backend.kernels.maxpool2_forward(np.ascontiguousarray(x.data))

    def backward(g):
        return (backend.kernels.maxpool2_backward(g, idx, x.shape),)

    return make_result(out, (x,), backward), idx


def max_unpool3d(values: np.ndarray, idx: np.ndarray, shape) -> np.ndarray:
    """Scatter pooled values back to their argmax positions (zeros elsewhere)."""
    out = np.zeros(int(np.prod(shape)))
    out[idx.ravel()] = np.asarray(values, dtype=np.float64).ravel()
    return out.reshape(shape)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return make_result(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def softmax_channels(x: Tensor) -> Tensor:
    """Softmax over axis 1, max-subtracted."""
    z = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=1, keepdims=True)

    def backward(g):
        return (p * (g - (g * p).sum(axis=1, keepdims=True)),)

    return make_result(p, (x,), backward)


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[0] != b.shape[0] or a.shape[2:] != b.shape[2:]:
        raise ShapeMismatch(f"concat_channels: {a.shape} vs {b.shape}")
    ca = a.shape[1]
    out = np.concatenate([a.data, b.data], axis=1)
    return make_result(out, (a, b), lambda g: (g[:, :ca], g[:, ca:]))


@dataclass
class BatchNormState:
    """Per-channel affine parameters plus running statistics.

    Running variance tracks the biased (population) batch variance, so with
    running stats equal to the batch stats inference reproduces training-mode
    output exactly.
    """

    channels: int
    momentum: float = 0.1
    eps: float = 1e-5
    gamma: Tensor = field(default=None)
    beta: Tensor = field(default=None)
    running_mean: np.ndarray = field(default=None)
    running_var: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.eps <= 0:
            raise ValueError("eps must be positive")
        if self.gamma is None:
            self.gamma = Tensor(np.ones(self.channels), requires_grad=True)
        if self.beta is None:
            self.beta = Tensor(np.zeros(self.channels), requires_grad=True)
        if self.running_mean is None:
            self.running_mean = np.zeros(self.channels)
        if self.running_var is None:
            self.running_var = np.ones(self.channels)


def batchnorm3d(x: Tensor, state: BatchNormState, mode: str = "train") -> Tensor:
    _check5(x, "batchnorm3d")
    if x.shape[1] != state.channels:
        raise ShapeMismatch(f"batchnorm3d: {x.shape[1]} channels vs state for {state.channels}")
    axes = (0, 2, 3, 4)
    bshape = (1, -1, 1, 1, 1)
    gamma, beta = state.gamma, state.beta
    if mode == "train":
        m = x.data.size // x.shape[1]
        if m < 2:
            raise DegenerateBatch("batchnorm3d in train mode needs at least 2 values per channel")
        mean = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        mom = state.momentum
        state.running_mean = (1 - mom) * state.running_mean + mom * mean
        state.running_var = (1 - mom) * state.running_var + mom * var
    elif mode == "infer":
        mean, var = state.running_mean, state.running_var
    else:
        raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")

    invstd = 1.0 / np.sqrt(var + state.eps)
    xhat = (x.data - mean.reshape(bshape)) * invstd.reshape(bshape)
    out = gamma.data.reshape(bshape) * xhat + beta.data.reshape(bshape)

    def backward(g):
        gg = (g * xhat).sum(axis=axes)
        gb = g.sum(axis=axes)
        scale = (gamma.data * invstd).reshape(bshape)
        if mode == "train":
            m = x.data.size // x.shape[1]
            gx = scale / m * (m * g - gb.reshape(bshape) - xhat * gg.reshape(bshape))
        else:
            gx = g * scale
        return gx, gg, gb

    return make_result(out, (as_tensor(x), gamma, beta), backward)
