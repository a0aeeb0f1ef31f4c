from typing import Any, Optional

import numpy as np

from factorizer.autograd import functional as F
from factorizer.autograd.tensor import Tensor
from factorizer.exceptions import ConfigurationError
from factorizer.models.layers import MLP, LayerNorm, PointwiseConv
from factorizer.models.matricize import MatricizedBatch, dematricize, dematricize_factor, matricize
from factorizer.models.module import Module, Parameter
from factorizer.models.nmf import NMF
from factorizer.schemas.config import MatricizeConfig, NmfConfig


class WrappedNMF(Module):
    """Pointwise projection, matricize, ReLU, NMF reconstruction, dematricize, pointwise projection"""

    def __init__(
        self,
        channels: int,
        matricize_cfg: MatricizeConfig,
        nmf_cfg: NmfConfig,
        index: int,
        rng: np.random.Generator,
        seed: int = 0,
        dtype: Any = np.float32,
    ):
        super().__init__()
        self.matricize_cfg = matricize_cfg
        self.in_projection = PointwiseConv(channels, channels, rng, dtype=dtype)
        self.nmf = NMF(nmf_cfg, index=index, seed=seed)
        self.out_projection = PointwiseConv(channels, channels, rng, dtype=dtype)
        self.last_batch: Optional[MatricizedBatch] = None

    def forward(self, x: Tensor) -> Tensor:
        batch = matricize(self.in_projection(x), self.matricize_cfg)
        reconstruction = self.nmf(batch.matrices.relu())
        if self.nmf.capture:
            self.last_batch = batch
        restored = dematricize(MatricizedBatch(reconstruction, batch.original_shape, batch.config))
        return self.out_projection(restored)

    def component_maps(self) -> Optional[np.ndarray]:
        """Spatial factors of the last captured forward as (B, heads * R, H, W, D)"""
        if self.nmf.last_factors is None or self.last_batch is None:
            return None
        return dematricize_factor(self.nmf.last_factors.G, self.last_batch).numpy()


class FactorizerBlock(Module):
    """
    Residual block: y = WrappedNMF(LN(x)) + x, z = MLP(LN(y)) + y.

    `nmf_enabled` and `mlp_enabled` short-circuit a subblock, leaving its
    residual identity.
    """

    def __init__(
        self,
        channels: int,
        matricize_cfg: MatricizeConfig,
        nmf_cfg: NmfConfig,
        index: int,
        rng: np.random.Generator,
        seed: int = 0,
        mlp_ratio: int = 2,
        norm_eps: float = 1e-5,
        dtype: Any = np.float32,
    ):
        super().__init__()
        self.norm1 = LayerNorm(channels, eps=norm_eps, dtype=dtype)
        self.wrapped_nmf = WrappedNMF(channels, matricize_cfg, nmf_cfg, index, rng, seed=seed, dtype=dtype)
        self.norm2 = LayerNorm(channels, eps=norm_eps, dtype=dtype)
        self.mlp = MLP(channels, rng, ratio=mlp_ratio, dtype=dtype)
        self.nmf_enabled = True
        self.mlp_enabled = True
        self.short_circuited = False

    @property
    def nmf(self) -> NMF:
        return self.wrapped_nmf.nmf

    def forward(self, x: Tensor) -> Tensor:
        y = x
        if self.nmf_enabled and not self.short_circuited:
            y = self.wrapped_nmf(self.norm1(x)) + x
        z = y
        if self.mlp_enabled:
            z = self.mlp(self.norm2(y)) + y
        return z


class PositionalEmbedding(Module):
    """Learnable (C, H, W, D) tensor added at the bridge"""

    def __init__(self, channels: int, extent: tuple, rng: np.random.Generator, std: float = 0.02, dtype: Any = np.float32):
        super().__init__()
        shape = (channels,) + tuple(extent)
        self.embedding = Parameter(rng.normal(0.0, std, size=shape).astype(dtype))
        self.enabled = True

    def forward(self, x: Tensor) -> Tensor:
        if not self.enabled:
            return x
        return add_positional_embedding(x, self.embedding)


def add_positional_embedding(x: Tensor, pe: Tensor) -> Tensor:
    if x.ndim != 5 or tuple(x.shape[1:]) != tuple(pe.shape):
        raise ConfigurationError(
            f"positional embedding {pe.shape} does not match bridge input {x.shape[1:]}; "
            "the input patch size must equal the training patch size"
        )
    return F.add(x, F.reshape(pe, (1,) + tuple(pe.shape)))
