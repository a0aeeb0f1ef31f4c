"""Soft Dice and cross-entropy losses with deep supervision."""
from typing import List, Sequence, Union

import numpy as np

from factorizer.autograd import functional as F
from factorizer.autograd.tensor import Tensor
from factorizer.exceptions import UsageError
from factorizer.models.network import NetworkOutput
from factorizer.schemas.config import OutputMode

DICE_EPS = 1e-5
LOG_EPS = 1e-12
DEEP_SUPERVISION_WEIGHTS = (1.0, 0.5, 0.25)

ArrayLike = Union[np.ndarray, Tensor]


def one_hot(label: np.ndarray, classes: int, dtype: np.dtype = np.float32) -> np.ndarray:
    """(B, H, W, D) integer labels -> (B, classes, H, W, D), class 0 included"""
    label = np.asarray(label)
    if label.min() < 0 or label.max() >= classes:
        raise UsageError(f"labels outside 0..{classes - 1}: [{label.min()}, {label.max()}]")
    encoded = np.eye(classes, dtype=dtype)[label]
    return np.moveaxis(encoded, -1, 1)


def region_targets(label: np.ndarray, classes: int, dtype: np.dtype = np.float32) -> np.ndarray:
    """
    Nested foreground regions for per-class sigmoid outputs.

    Channel k-1 is the region label >= k, so region k contains region k+1
    (the way enhancing tumor sits inside tumor core inside whole tumor).
    """
    label = np.asarray(label)
    regions = [(label >= k) for k in range(1, classes)]
    return np.stack(regions, axis=1).astype(dtype)


def encode_target(label: np.ndarray, out_channels: int, mode: OutputMode, dtype: np.dtype = np.float32) -> np.ndarray:
    if OutputMode(mode) == OutputMode.SOFTMAX:
        return one_hot(label, out_channels, dtype)
    return region_targets(label, out_channels + 1, dtype)


def probabilities(logits: Tensor, mode: OutputMode) -> Tensor:
    if OutputMode(mode) == OutputMode.SOFTMAX:
        return F.softmax(logits, axis=1)
    return F.sigmoid(logits)


def soft_dice_loss(target: ArrayLike, prob: Tensor, eps: float = DICE_EPS) -> Tensor:
    """1 - (2<G,P> + eps) / (|G|^2 + |P|^2 + eps)"""
    target = _constant(target, prob)
    if target.shape != prob.shape:
        raise UsageError(f"target {target.shape} and probabilities {prob.shape} differ")
    overlap = (target * prob).sum()
    denominator = (target * target).sum() + (prob * prob).sum() + eps
    return 1.0 - (2.0 * overlap + eps) / denominator


def cross_entropy_loss(target: ArrayLike, prob: Tensor) -> Tensor:
    """
    -(1/N) <G, log P> with N the voxel count; P clamped to [1e-12, 1].

    Classes run along axis 0 of a (J, N) matrix and along axis 1 of a
    batched (B, J, H, W, D) volume.
    """
    target = _constant(target, prob)
    if target.shape != prob.shape:
        raise UsageError(f"target {target.shape} and probabilities {prob.shape} differ")
    voxels = prob.size // prob.shape[class_axis(prob.ndim)]
    log_prob = prob.clamp(LOG_EPS, 1.0).log()
    return -(target * log_prob).sum() / float(voxels)


def segmentation_loss(logits: Tensor, target: ArrayLike, mode: OutputMode) -> Tensor:
    prob = probabilities(logits, mode)
    return soft_dice_loss(target, prob) + cross_entropy_loss(target, prob)


def downsample_target(target: np.ndarray) -> np.ndarray:
    """2x2x2 max-pool of a (B, C, H, W, D) binary target"""
    b, c, h, w, d = target.shape
    if h % 2 or w % 2 or d % 2:
        raise UsageError(f"cannot halve target extents {target.shape[2:]}")
    cells = target.reshape(b, c, h // 2, 2, w // 2, 2, d // 2, 2)
    return cells.max(axis=(3, 5, 7))


def target_pyramid(target: np.ndarray, levels: int = 3) -> List[np.ndarray]:
    pyramid = [target]
    for _ in range(levels - 1):
        pyramid.append(downsample_target(pyramid[-1]))
    return pyramid


def total_loss(
    output: NetworkOutput,
    targets: Sequence[np.ndarray],
    mode: OutputMode,
    weights: Sequence[float] = DEEP_SUPERVISION_WEIGHTS,
) -> Tensor:
    """Weighted sum of Dice + CE over the full-resolution logits and each auxiliary output"""
    outputs = [output.logits] + list(output.aux)
    if len(targets) < len(outputs) or len(weights) < len(outputs):
        raise UsageError(f"{len(outputs)} outputs need as many targets and weights, got {len(targets)} and {len(weights)}")
    loss = None
    for logits, target, weight in zip(outputs, targets, weights):
        if tuple(target.shape) != tuple(logits.shape):
            raise UsageError(f"target scale {target.shape} does not match output {logits.shape}")
        term = segmentation_loss(logits, target, mode) * weight
        loss = term if loss is None else loss + term
    return loss


def class_axis(ndim: int) -> int:
    if ndim <= 2:
        return 0
    return 1


def _constant(value: ArrayLike, like: Tensor) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=like.dtype))
