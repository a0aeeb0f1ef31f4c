"""Convolutions, pointwise projections, channel layer norm and the MLP subblock."""
import math
from typing import Any

import numpy as np

from factorizer.autograd import functional as F
from factorizer.autograd.tensor import Tensor
from factorizer.exceptions import DimensionError
from factorizer.models.module import Module, Parameter


def fan_in_uniform(rng: np.random.Generator, shape: tuple, fan_in: int, dtype: Any) -> np.ndarray:
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Conv3d(Module):
    """Cubic-kernel 3D convolution"""

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel_size: int,
        rng: np.random.Generator,
        stride: int = 1,
        padding: int = 0,
        dtype: Any = np.float32,
    ):
        super().__init__()
        self.stride, self.padding = stride, padding
        shape = (out_channels, in_channels) + (kernel_size,) * 3
        self.weight = Parameter(fan_in_uniform(rng, shape, in_channels * kernel_size ** 3, dtype))
        self.bias = Parameter(np.zeros(out_channels, dtype=dtype))

    def forward(self, x: Tensor) -> Tensor:
        return F.conv3d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)


class ConvTranspose3d(Module):
    """Stride-k upsampling by a k-cubed transposed convolution"""

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        rng: np.random.Generator,
        kernel_size: int = 2,
        dtype: Any = np.float32,
    ):
        super().__init__()
        self.stride = kernel_size
        shape = (in_channels, out_channels) + (kernel_size,) * 3
        self.weight = Parameter(fan_in_uniform(rng, shape, in_channels * kernel_size ** 3, dtype))
        self.bias = Parameter(np.zeros(out_channels, dtype=dtype))

    def forward(self, x: Tensor) -> Tensor:
        return F.conv3d_transposed(x, self.weight, self.bias, stride=self.stride)


class PointwiseConv(Module):
    """Kernel-1 convolution computed as a per-voxel matrix product"""

    def __init__(self, in_channels: int, out_channels: int, rng: np.random.Generator, dtype: Any = np.float32):
        super().__init__()
        self.in_channels, self.out_channels = in_channels, out_channels
        self.weight = Parameter(fan_in_uniform(rng, (out_channels, in_channels), in_channels, dtype))
        self.bias = Parameter(np.zeros(out_channels, dtype=dtype))

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 5 or x.shape[1] != self.in_channels:
            raise DimensionError(f"pointwise conv expects (B, {self.in_channels}, H, W, D), got {x.shape}")
        b, _, h, w, d = x.shape
        flat = F.reshape(x, (b, self.in_channels, h * w * d))
        out = F.add(F.matmul(self.weight, flat), F.reshape(self.bias, (1, self.out_channels, 1)))
        return F.reshape(out, (b, self.out_channels, h, w, d))

    def set_identity(self) -> None:
        if self.in_channels != self.out_channels:
            raise DimensionError("identity projection needs equal channel counts")
        self.weight.assign(np.eye(self.in_channels))
        self.bias.assign(np.zeros(self.out_channels))


class LayerNorm(Module):
    """Normalization over the channel axis at every voxel"""

    def __init__(self, channels: int, eps: float = 1e-5, dtype: Any = np.float32):
        super().__init__()
        self.eps = eps
        self.gain = Parameter(np.ones(channels, dtype=dtype))
        self.offset = Parameter(np.zeros(channels, dtype=dtype))

    def forward(self, x: Tensor) -> Tensor:
        return F.layer_norm(x, self.gain, self.offset, axis=1, eps=self.eps)


class MLP(Module):
    """Pointwise conv, GELU, pointwise conv; hidden width ratio * C"""

    def __init__(self, channels: int, rng: np.random.Generator, ratio: int = 2, dtype: Any = np.float32):
        super().__init__()
        self.fc1 = PointwiseConv(channels, ratio * channels, rng, dtype=dtype)
        self.fc2 = PointwiseConv(ratio * channels, channels, rng, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        return self.fc2(F.gelu(self.fc1(x)))
