"""Dense float64 tensors with tape-based reverse-mode differentiation."""
from .backend import available_backends, current_backend, use_backend
from .core import Node, Tensor, grad_enabled, no_grad
from .ops import (
    BatchNormState,
    batchnorm3d,
    concat_channels,
    conv3d,
    max_unpool3d,
    maxpool3d,
    pointwise_conv3d,
    relu,
    softmax_channels,
    transposed_conv3d,
)

__all__ = [
    "BatchNormState",
    "Node",
    "Tensor",
    "available_backends",
    "batchnorm3d",
    "concat_channels",
    "conv3d",
    "current_backend",
    "grad_enabled",
    "max_unpool3d",
    "maxpool3d",
    "no_grad",
    "pointwise_conv3d",
    "relu",
    "softmax_channels",
    "transposed_conv3d",
    "use_backend",
]
