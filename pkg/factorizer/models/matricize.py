"""
Reshaping batches of multi-channel volumes into batches of matrices and back.

Global: one (E, H*W*D) matrix per group of E channels.
Local: one (E, P^3) matrix per group of E channels and per P^3 window.
SW: Local matrices of the volume followed by Local matrices of the volume
cyclically rolled by P/2 on every spatial axis.
"""
from dataclasses import dataclass
from typing import Tuple

from factorizer.autograd import functional as F
from factorizer.autograd.tensor import Tensor
from factorizer.exceptions import ConfigurationError, DimensionError, StructuralError
from factorizer.schemas.config import MatricizeConfig, MatricizeMode

GLOBAL_PATTERN = "b (g e) h w d -> (b g) e (h w d)"
LOCAL_PATTERN = "b (gc e) (gh ph) (gw pw) (gd pd) -> (b gc gh gw gd) e (ph pw pd)"

_SPATIAL_AXES = (2, 3, 4)
_AXIS_NAMES = ("H", "W", "D")


def _reverse(pattern: str) -> str:
    lhs, rhs = pattern.split("->")
    return f"{rhs.strip()} -> {lhs.strip()}"


@dataclass(frozen=True)
class MatricizedBatch:
    matrices: Tensor
    original_shape: Tuple[int, int, int, int, int]
    config: MatricizeConfig


def validate(shape: Tuple[int, ...], cfg: MatricizeConfig) -> None:
    """Raise ConfigurationError naming the first axis that does not divide."""
    if len(shape) != 5:
        raise DimensionError(f"matricize expects (B, C, H, W, D), got {shape}")
    channels = shape[1]
    if channels % cfg.head_dim:
        raise ConfigurationError(f"head_dim {cfg.head_dim} does not divide channel axis C={channels}")
    if cfg.mode == MatricizeMode.GLOBAL:
        return
    for name, extent in zip(_AXIS_NAMES, shape[2:]):
        if extent % cfg.patch:
            raise ConfigurationError(f"patch {cfg.patch} does not divide axis {name}={extent}")
    if cfg.mode == MatricizeMode.SW and cfg.patch % 2:
        raise ConfigurationError(f"shifted windows need an even patch, got {cfg.patch}")


def matrix_shape(shape: Tuple[int, ...], cfg: MatricizeConfig) -> Tuple[int, int, int]:
    """(B', M, N) produced by `matricize` for an input of `shape`."""
    validate(shape, cfg)
    b, c, h, w, d = shape
    heads = c // cfg.head_dim
    if cfg.mode == MatricizeMode.GLOBAL:
        return b * heads, cfg.head_dim, h * w * d
    p = cfg.patch
    windows = (h // p) * (w // p) * (d // p)
    batch = b * heads * windows
    if cfg.mode == MatricizeMode.SW:
        batch *= 2
    return batch, cfg.head_dim, p ** 3


def _local(x: Tensor, cfg: MatricizeConfig) -> Tensor:
    p = cfg.patch
    return F.rearrange(x, LOCAL_PATTERN, e=cfg.head_dim, ph=p, pw=p, pd=p)


def _local_inverse(matrices: Tensor, shape: Tuple[int, ...], cfg: MatricizeConfig) -> Tensor:
    b, _, h, w, d = shape
    p = cfg.patch
    return F.rearrange(
        matrices,
        _reverse(LOCAL_PATTERN),
        b=b, e=cfg.head_dim, gh=h // p, gw=w // p, gd=d // p, ph=p, pw=p, pd=p,
    )


def _shift(cfg: MatricizeConfig) -> Tuple[int, int, int]:
    return (cfg.patch // 2,) * 3


def matricize(x: Tensor, cfg: MatricizeConfig) -> MatricizedBatch:
    validate(x.shape, cfg)
    if cfg.mode == MatricizeMode.GLOBAL:
        matrices = F.rearrange(x, GLOBAL_PATTERN, e=cfg.head_dim)
    elif cfg.mode == MatricizeMode.LOCAL:
        matrices = _local(x, cfg)
    else:
        shifted = F.roll(x, _shift(cfg), _SPATIAL_AXES)
        matrices = F.concat([_local(x, cfg), _local(shifted, cfg)], axis=0)
    return MatricizedBatch(matrices=matrices, original_shape=tuple(x.shape), config=cfg)


def dematricize(m: MatricizedBatch) -> Tensor:
    cfg, shape = m.config, m.original_shape
    expected = matrix_shape(shape, cfg)
    if tuple(m.matrices.shape) != expected:
        raise StructuralError(
            f"matrices of shape {m.matrices.shape} do not match {expected} for image {shape} ({cfg.mode.value})"
        )
    if cfg.mode == MatricizeMode.GLOBAL:
        b, _, h, w, d = shape
        return F.rearrange(m.matrices, _reverse(GLOBAL_PATTERN), b=b, e=cfg.head_dim, h=h, w=w, d=d)
    if cfg.mode == MatricizeMode.LOCAL:
        return _local_inverse(m.matrices, shape, cfg)
    half = expected[0] // 2
    regular = _local_inverse(m.matrices[:half], shape, cfg)
    shifted = _local_inverse(m.matrices[half:], shape, cfg)
    unrolled = F.roll(shifted, tuple(-s for s in _shift(cfg)), _SPATIAL_AXES)
    return (regular + unrolled) * 0.5


def dematricize_factor(factor: Tensor, m: MatricizedBatch) -> Tensor:
    """
    Map a spatial NMF factor G of shape (B', N, R) back to image layout.

    Returns (B, heads * R, H, W, D): channel block k holds the R components of
    head k. For SW the regular and un-rolled shifted maps are averaged.
    """
    b, c, h, w, d = m.original_shape
    batch, _, n = matrix_shape(m.original_shape, m.config)
    if factor.ndim != 3 or factor.shape[:2] != (batch, n):
        raise StructuralError(f"factor of shape {factor.shape} does not match matrices ({batch}, *, {n})")
    rank = factor.shape[2]
    heads = c // m.config.head_dim
    cfg = m.config.updated(head_dim=rank)
    as_matrices = MatricizedBatch(
        matrices=factor.mT,
        original_shape=(b, heads * rank, h, w, d),
        config=cfg,
    )
    return dematricize(as_matrices)
