"""
U-shaped Factorizer: stem, four encoder stages, bridge at 1/16 resolution with a
learnable positional embedding, four decoder stages with skip connections, and
segmentation heads at the three highest decoder resolutions.

NMF layers are numbered in forward order: encoder 1-4, bridge 5, decoder 6-9
(for one block per stage).
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, List, Optional

import numpy as np

from factorizer.autograd import functional as F
from factorizer.autograd.tensor import Tensor
from factorizer.exceptions import ConfigurationError, UsageError
from factorizer.models.blocks import FactorizerBlock, PositionalEmbedding
from factorizer.models.layers import Conv3d, ConvTranspose3d, PointwiseConv
from factorizer.models.module import Module, ModuleList
from factorizer.models.nmf import NMF, NmfOverride
from factorizer.schemas.config import FactorizerConfig, MatricizeConfig, MatricizeMode, Solver
from factorizer.utils import rng as rng_utils

logger = logging.getLogger(__name__)

BRIDGE_STAGE = 4


@dataclass
class NetworkOutput:
    logits: Tensor
    aux: List[Tensor] = field(default_factory=list)


def stage_matricize_config(cfg: FactorizerConfig, stage: int) -> MatricizeConfig:
    """
    Matricize settings at `stage` (4 is the bridge).

    The window shrinks to gcd(P, extent) where the stage is smaller than P, and
    shifted windows fall back to Local when that window is odd.
    """
    channels = cfg.stage_channels(stage)
    head_dim = math.gcd(cfg.stage_value("head_dim", stage), channels)
    if cfg.matricize == MatricizeMode.GLOBAL:
        return MatricizeConfig(mode=MatricizeMode.GLOBAL, head_dim=head_dim)
    patch = cfg.stage_value("patch", stage)
    for extent in cfg.stage_extent(stage):
        patch = math.gcd(patch, extent)
    mode = cfg.matricize
    if mode == MatricizeMode.SW and patch % 2:
        logger.debug(f"Stage {stage}: window {patch} is odd, using local windows")
        mode = MatricizeMode.LOCAL
    return MatricizeConfig(mode=mode, head_dim=head_dim, patch=patch)


class Stage(Module):
    """Blocks at one resolution plus the resampling conv that follows or precedes them"""

    def __init__(self):
        super().__init__()
        self.blocks = ModuleList()

    def run_blocks(self, x: Tensor) -> Tensor:
        for block in self.blocks:
            x = block(x)
        return x


class Factorizer(Module):
    def __init__(self, cfg: FactorizerConfig, seed: int = 0):
        super().__init__()
        self.cfg = cfg
        self.seed = seed
        dtype = np.dtype(cfg.dtype)
        rng = rng_utils.generator(rng_utils.STREAM_INIT, seed)
        c = cfg.base_channels
        index = 0

        def make_blocks(stage: Stage, stage_index: int) -> None:
            nonlocal index
            channels = cfg.stage_channels(stage_index)
            matricize_cfg = stage_matricize_config(cfg, stage_index)
            for _ in range(cfg.blocks_per_stage):
                index += 1
                block = FactorizerBlock(
                    channels, matricize_cfg, cfg.nmf, index, rng,
                    seed=seed, mlp_ratio=cfg.mlp_ratio, norm_eps=cfg.norm_eps, dtype=dtype,
                )
                block.nmf_enabled = cfg.use_nmf
                block.mlp_enabled = cfg.use_mlp
                stage.blocks.append(block)

        self.stem = Conv3d(cfg.in_channels, c, 3, rng, padding=1, dtype=dtype)

        self.encoder = ModuleList()
        for s in range(cfg.stages):
            stage = Stage()
            make_blocks(stage, s)
            stage.down = Conv3d(cfg.stage_channels(s), cfg.stage_channels(s + 1), 2, rng, stride=2, dtype=dtype)
            self.encoder.append(stage)

        self.bridge = Stage()
        if cfg.positional_embedding:
            self.bridge.position = PositionalEmbedding(
                cfg.stage_channels(BRIDGE_STAGE), cfg.stage_extent(BRIDGE_STAGE), rng, dtype=dtype
            )
        make_blocks(self.bridge, BRIDGE_STAGE)

        self.decoder = ModuleList()
        for s in reversed(range(cfg.stages)):
            stage = Stage()
            channels = cfg.stage_channels(s)
            stage.up = ConvTranspose3d(cfg.stage_channels(s + 1), channels, rng, dtype=dtype)
            stage.fuse = PointwiseConv(2 * channels, channels, rng, dtype=dtype)
            make_blocks(stage, s)
            self.decoder.append(stage)

        head_stages = (0, 1, 2) if cfg.deep_supervision else (0,)
        self.heads = ModuleList([PointwiseConv(cfg.stage_channels(s), cfg.out_channels, rng, dtype=dtype) for s in head_stages])
        logger.info(f"Built Factorizer with {self.parameter_count():,} parameters and {index} NMF layers")

    # Forward

    def check_input(self, x: Tensor) -> None:
        if x.ndim != 5 or x.shape[1] != self.cfg.in_channels:
            raise ConfigurationError(f"expected input (B, {self.cfg.in_channels}, H, W, D), got {x.shape}")
        bad = [extent for extent in x.shape[2:] if extent % 16]
        if bad:
            raise ConfigurationError(f"spatial extents must be multiples of 16, got {x.shape[2:]}")

    def forward(self, x: Tensor, training: Optional[bool] = None) -> NetworkOutput:
        self.check_input(x)
        training = self.training if training is None else training
        if x.dtype != np.dtype(self.cfg.dtype):
            x = x.astype(self.cfg.dtype)
        h = self.stem(x)
        skips = []
        for stage in self.encoder:
            h = stage.run_blocks(h)
            skips.append(h)
            h = stage.down(h)
        if self.cfg.positional_embedding:
            h = self.bridge.position(h)
        h = self.bridge.run_blocks(h)
        decoded = []
        for stage, skip in zip(self.decoder, reversed(skips)):
            h = stage.up(h)
            h = stage.fuse(F.concat([h, skip], axis=1))
            h = stage.run_blocks(h)
            decoded.append(h)
        # decoded runs from 1/8 up to full resolution
        logits = self.heads[0](decoded[-1])
        aux = []
        if training and self.cfg.deep_supervision:
            aux = [self.heads[1](decoded[-2]), self.heads[2](decoded[-3])]
        return NetworkOutput(logits=logits, aux=aux)

    # NMF layer access

    def blocks(self) -> List[FactorizerBlock]:
        """Factorizer blocks in NMF-layer order"""
        ordered = []
        for stage in list(self.encoder) + [self.bridge] + list(self.decoder):
            ordered.extend(stage.blocks)
        return ordered

    def nmf_layers(self) -> List[NMF]:
        return [block.nmf for block in self.blocks()]

    def _select(self, indices: Optional[Iterable[int]]) -> List[FactorizerBlock]:
        blocks = self.blocks()
        if indices is None:
            return blocks
        indices = list(indices)
        unknown = [i for i in indices if not 1 <= i <= len(blocks)]
        if unknown:
            raise UsageError(f"unknown NMF layer indices {unknown}; valid range is 1..{len(blocks)}")
        return [blocks[i - 1] for i in indices]

    def set_step(self, step: int) -> None:
        for layer in self.nmf_layers():
            layer.step = step

    def short_circuit(self, indices: Optional[Iterable[int]] = None) -> None:
        """Skip the NMF subblock of the given layers (all when None)"""
        for block in self._select(indices):
            block.short_circuited = True

    def override_nmf(
        self,
        iterations: Optional[int] = None,
        rank: Optional[int] = None,
        solver: Optional[Solver] = None,
        indices: Optional[Iterable[int]] = None,
    ) -> None:
        if iterations is not None and iterations < 1:
            raise UsageError(f"iterations must be >= 1, got {iterations}")
        if rank is not None and rank < 1:
            raise UsageError(f"rank must be >= 1, got {rank}")
        override = NmfOverride(iterations=iterations, rank=rank, solver=Solver(solver) if solver else None)
        for block in self._select(indices):
            block.nmf.override = override

    def clear_overrides(self) -> None:
        for block in self.blocks():
            block.short_circuited = False
            block.nmf.override = None

    def capture_components(self, enabled: bool = True) -> None:
        for block in self.blocks():
            block.nmf.capture = enabled
            if not enabled:
                block.nmf.last_factors = None
                block.wrapped_nmf.last_batch = None


def build(cfg: FactorizerConfig, seed: int = 0) -> Factorizer:
    return Factorizer(cfg, seed=seed)
