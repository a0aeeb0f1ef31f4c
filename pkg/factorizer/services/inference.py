import itertools
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from factorizer.autograd.tensor import Tensor, no_grad
from factorizer.models.network import Factorizer
from factorizer.schemas.config import BlendMode, InferConfig, OutputMode
from factorizer.services.losses import probabilities
from factorizer.services.synthetic import VolumeSample
from factorizer.services.transforms import preprocess, uncrop

logger = logging.getLogger(__name__)


@dataclass
class InferenceResult:
    probabilities: np.ndarray
    binary: np.ndarray
    labels: np.ndarray


def tile_starts(extent: int, window: int, overlap: float) -> List[int]:
    """Corners on a window*(1-overlap) grid plus a final tile flush with the end"""
    if window >= extent:
        return [0]
    stride = max(1, int(window * (1.0 - overlap)))
    starts = list(range(0, extent - window + 1, stride))
    if starts[-1] != extent - window:
        starts.append(extent - window)
    return starts


def blend_weights(window: Sequence[int], mode: BlendMode) -> np.ndarray:
    if BlendMode(mode) == BlendMode.CONSTANT:
        return np.ones(tuple(window), dtype=np.float64)
    axes = []
    for n in window:
        centre = (n - 1) / 2.0
        sigma = n / 8.0
        axes.append(np.exp(-0.5 * ((np.arange(n) - centre) / sigma) ** 2))
    weights = axes[0][:, None, None] * axes[1][None, :, None] * axes[2][None, None, :]
    return np.maximum(weights / weights.max(), 1e-3)


def _pad_to_window(image: np.ndarray, window: Sequence[int]) -> Tuple[np.ndarray, Tuple[int, int, int]]:
    extent = image.shape[1:]
    padding = [(0, max(0, w - n)) for w, n in zip(window, extent)]
    if not any(after for _, after in padding):
        return image, tuple(extent)
    logger.warning(f"Volume {tuple(extent)} is smaller than window {tuple(window)}; reflect-padding")
    return np.pad(image, [(0, 0)] + padding, mode="reflect"), tuple(extent)


def predict_tile(model: Factorizer, tile: np.ndarray, mode: OutputMode) -> np.ndarray:
    with no_grad():
        output = model(Tensor(tile[None]), training=False)
        return probabilities(output.logits, mode).numpy()[0].astype(np.float64)


def sliding_window_infer(
    model: Factorizer,
    image: np.ndarray,
    cfg: InferConfig,
    window: Sequence[int],
) -> InferenceResult:
    """Blend per-tile probabilities over an overlapping grid, then threshold and label"""
    mode = model.cfg.output_mode
    padded, extent = _pad_to_window(np.asarray(image, dtype=np.dtype(model.cfg.dtype)), window)
    grids = [tile_starts(n, w, cfg.overlap) for n, w in zip(padded.shape[1:], window)]
    corners = list(itertools.product(*grids))
    weights = blend_weights(window, cfg.blend)

    def run(corner: Tuple[int, int, int]) -> np.ndarray:
        region = tuple(slice(c, c + w) for c, w in zip(corner, window))
        return predict_tile(model, padded[(slice(None),) + region], mode)

    if cfg.num_workers > 1:
        with ThreadPoolExecutor(max_workers=cfg.num_workers) as executor:
            tiles = list(executor.map(run, corners))
    else:
        tiles = [run(corner) for corner in corners]

    accumulated = np.zeros((model.cfg.out_channels,) + padded.shape[1:], dtype=np.float64)
    count = np.zeros(padded.shape[1:], dtype=np.float64)
    # reduction in corner order
    for corner, tile in zip(corners, tiles):
        region = tuple(slice(c, c + w) for c, w in zip(corner, window))
        accumulated[(slice(None),) + region] += tile * weights
        count[region] += weights
    probs = accumulated / count
    probs = probs[(slice(None),) + tuple(slice(0, n) for n in extent)]
    logger.debug(f"Blended {len(corners)} tiles over volume {extent}")
    return finalize(probs, mode, cfg.threshold)


def finalize(probs: np.ndarray, mode: OutputMode, threshold: float) -> InferenceResult:
    binary = probs > threshold
    if OutputMode(mode) == OutputMode.SOFTMAX:
        labels = probs.argmax(axis=0)
    else:
        labels = np.zeros(probs.shape[1:], dtype=np.int64)
        for k in range(probs.shape[0]):
            labels[binary[k]] = k + 1
    return InferenceResult(probabilities=probs.astype(np.float32), binary=binary, labels=labels.astype(np.int64))


def predict_sample(
    model: Factorizer, sample: VolumeSample, cfg: InferConfig, window: Sequence[int]
) -> InferenceResult:
    """Preprocess a raw sample, infer, and map the result back to the original grid"""
    prepared = preprocess(sample)
    result = sliding_window_infer(model, prepared.image, cfg, window)
    return InferenceResult(
        probabilities=uncrop(result.probabilities, prepared),
        binary=uncrop(result.binary, prepared, fill=False),
        labels=uncrop(result.labels, prepared),
    )
