"""
Batched nonnegative matrix factorization as a differentiable layer.

The forward pass runs a fixed number of solver iterations from a random
uniform initialization and returns the reconstruction F @ G^T. Every iteration
is recorded on the autodiff graph, so gradients flow through the unrolled solver.
"""
import logging
from dataclasses import dataclass
from typing import List, NamedTuple, Optional

import numpy as np

from factorizer.autograd import functional as F_
from factorizer.autograd.tensor import Tensor, no_grad
from factorizer.exceptions import ConfigurationError, DimensionError, DomainError
from factorizer.models.module import Module
from factorizer.schemas.config import NmfConfig, Solver
from factorizer.utils import rng as rng_utils

logger = logging.getLogger(__name__)


class FactorPair(NamedTuple):
    F: Tensor
    G: Tensor


@dataclass
class NmfOverride:
    """Runtime replacement of iteration count, rank or solver"""

    iterations: Optional[int] = None
    rank: Optional[int] = None
    solver: Optional[Solver] = None


def _numpy_objective(x: np.ndarray, f: np.ndarray, g: np.ndarray) -> float:
    residual = x - f @ np.swapaxes(g, -1, -2)
    return float((residual * residual).sum())


def nmf_objective(x: Tensor, F: Tensor, G: Tensor, per_instance: bool = False) -> Tensor:
    """Squared Frobenius error ||X - F G^T||^2, summed or per batch entry."""
    residual = x - F @ G.mT
    squared = residual * residual
    return squared.sum(axis=(1, 2)) if per_instance else squared.sum()


def init_factors(
    batch: int, m: int, n: int, rank: int, generator: np.random.Generator, dtype: np.dtype
) -> FactorPair:
    f = generator.uniform(0.0, 1.0, size=(batch, m, rank)).astype(dtype)
    g = generator.uniform(0.0, 1.0, size=(batch, n, rank)).astype(dtype)
    return FactorPair(Tensor(f), Tensor(g))


def rank_one_step(x: Tensor, F: Tensor, G: Tensor, eps: float) -> FactorPair:
    """f <- X g / (|g|^2 + eps), then g <- X^T f / (|f|^2 + eps)."""
    g_norm = (G * G).sum(axis=(1, 2), keepdims=True)
    F = F_.div(x @ G, g_norm, eps=eps)
    f_norm = (F * F).sum(axis=(1, 2), keepdims=True)
    G = F_.div(x.mT @ F, f_norm, eps=eps)
    return FactorPair(F, G)


def mu_step(x: Tensor, F: Tensor, G: Tensor, eps: float) -> FactorPair:
    """One multiplicative update of F, then of G."""
    if F.shape[-1] == 1:
        return rank_one_step(x, F, G, eps)
    F = F * F_.div(x @ G, F @ (G.mT @ G), eps=eps)
    G = G * F_.div(x.mT @ F, G @ (F.mT @ F), eps=eps)
    return FactorPair(F, G)


def _hals_columns(
    x: Tensor,
    target: Tensor,
    other: Tensor,
    eps: float,
    trace: Optional[List[float]],
    transpose: bool,
) -> Tensor:
    """Update every column of `target` in turn with `other` held fixed."""
    a = x @ other
    b = other.mT @ other
    rank = target.shape[-1]
    columns = [target[:, :, r:r + 1] for r in range(rank)]
    for r in range(rank):
        current = F_.concat(columns, axis=2)
        b_r = b[:, :, r:r + 1]
        b_rr = b[:, r:r + 1, r:r + 1]
        numerator = a[:, :, r:r + 1] - current @ b_r + columns[r] * b_rr
        columns[r] = F_.div(numerator, b_rr, eps=eps).relu()
        if trace is not None:
            updated = F_.concat(columns, axis=2).data
            f, g = (other.data, updated) if transpose else (updated, other.data)
            x_data = x.data if not transpose else np.swapaxes(x.data, -1, -2)
            trace.append(_numpy_objective(x_data, f, g))
    return F_.concat(columns, axis=2)


def hals_step(
    x: Tensor, F: Tensor, G: Tensor, eps: float, trace: Optional[List[float]] = None
) -> FactorPair:
    """
    One HALS sweep: the R columns of F, then the R columns of G.

    Column r solves min ||E_r - f_r g_r^T|| with E_r the residual of the other
    columns, computed from A = XG and B = G^T G. When `trace` is given the
    objective after each of the 2R column updates is appended to it.
    """
    if F.shape[-1] == 1:
        pair = rank_one_step(x, F, G, eps)
        if trace is not None:
            trace.append(_numpy_objective(x.data, pair.F.data, G.data))
            trace.append(_numpy_objective(x.data, pair.F.data, pair.G.data))
        return pair
    F = _hals_columns(x, F, G, eps, trace, transpose=False)
    G = _hals_columns(x.mT, G, F, eps, trace, transpose=True)
    return FactorPair(F, G)


_STEPS = {Solver.MU: mu_step, Solver.HALS: hals_step}


def check_input(x: Tensor, rank: int) -> None:
    if x.ndim != 3:
        raise DimensionError(f"NMF expects a batch of matrices (B, M, N), got {x.shape}")
    if (x.data < 0).any():
        raise DomainError(f"NMF input has {int((x.data < 0).sum())} negative entries")
    m, n = x.shape[1:]
    if rank > min(m, n):
        raise ConfigurationError(f"rank {rank} exceeds min(M, N) = {min(m, n)} for matrices {m}x{n}")


def factorize(
    x: Tensor,
    cfg: NmfConfig,
    generator: np.random.Generator,
    trace: Optional[List[float]] = None,
) -> FactorPair:
    """Run `cfg.iterations` solver steps; optionally record the objective after each."""
    check_input(x, cfg.rank)
    batch, m, n = x.shape
    with no_grad():
        pair = init_factors(batch, m, n, cfg.rank, generator, x.dtype)
    step = _STEPS[Solver(cfg.solver)]
    for _ in range(cfg.iterations):
        pair = step(x, pair.F, pair.G, cfg.eps)
        if trace is not None:
            trace.append(_numpy_objective(x.data, pair.F.data, pair.G.data))
    return pair


def nmf_forward(x: Tensor, cfg: NmfConfig, generator: Optional[np.random.Generator] = None) -> Tensor:
    """Reconstruction F @ G^T after exactly `cfg.iterations` iterations."""
    if generator is None:
        generator = rng_utils.generator(rng_utils.STREAM_NMF, cfg.init_seed)
    pair = factorize(x, cfg, generator)
    return pair.F @ pair.G.mT


class NMF(Module):
    """
    NMF layer with a fixed position in the network.

    The initialization generator is keyed by (seed, layer index, step), so every
    forward call draws fresh factors while a run stays reproducible.
    """

    def __init__(self, cfg: NmfConfig, index: int, seed: int = 0):
        super().__init__()
        self.cfg = cfg
        self.index = index
        self.seed = seed
        self.step = 0
        self.override: Optional[NmfOverride] = None
        self.capture = False
        self.last_factors: Optional[FactorPair] = None

    def effective_config(self, m: int, n: int) -> NmfConfig:
        if self.override is None:
            return self.cfg
        ov = self.override
        rank = ov.rank if ov.rank is not None else self.cfg.rank
        if rank > min(m, n):
            logger.warning(f"NMF layer {self.index}: rank {rank} clamped to {min(m, n)} for {m}x{n} matrices")
            rank = min(m, n)
        return self.cfg.updated(
            rank=rank,
            iterations=ov.iterations if ov.iterations is not None else self.cfg.iterations,
            solver=ov.solver if ov.solver is not None else self.cfg.solver,
        )

    def generator(self) -> np.random.Generator:
        return rng_utils.generator(rng_utils.STREAM_NMF, self.seed, self.cfg.init_seed, self.index, self.step)

    def forward(self, x: Tensor) -> Tensor:
        cfg = self.effective_config(*x.shape[1:]) if x.ndim == 3 else self.cfg
        pair = factorize(x, cfg, self.generator())
        if self.capture:
            self.last_factors = FactorPair(pair.F.detach(), pair.G.detach())
        return pair.F @ pair.G.mT
