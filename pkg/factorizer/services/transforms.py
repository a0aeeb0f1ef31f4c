"""Preprocessing, intensity/flip augmentation and patch sampling."""
import logging
from typing import Sequence, Tuple

import numpy as np
from scipy import ndimage

from factorizer.exceptions import UsageError
from factorizer.schemas.config import AugmentPolicy
from factorizer.services.synthetic import VolumeSample

logger = logging.getLogger(__name__)

STD_GUARD = 1e-8


def nonzero_bbox(image: np.ndarray) -> Tuple[Tuple[int, int], ...]:
    """Minimal (start, stop) per spatial axis containing every nonzero voxel of any channel"""
    occupied = np.any(image != 0, axis=0)
    if not occupied.any():
        return tuple((0, n) for n in occupied.shape)
    box = []
    for axis in range(occupied.ndim):
        other = tuple(a for a in range(occupied.ndim) if a != axis)
        hits = np.flatnonzero(occupied.any(axis=other))
        box.append((int(hits[0]), int(hits[-1]) + 1))
    return tuple(box)


def crop_to_nonzero(sample: VolumeSample) -> VolumeSample:
    box = nonzero_bbox(sample.image)
    region = tuple(slice(a, b) for a, b in box)
    cropped = sample.with_arrays(sample.image[(slice(None),) + region], sample.label[region])
    cropped.crop = box
    cropped.original_extent = tuple(sample.label.shape)
    return cropped


def zscore(image: np.ndarray) -> np.ndarray:
    mean = image.mean(axis=(1, 2, 3), keepdims=True)
    std = np.maximum(image.std(axis=(1, 2, 3), keepdims=True), STD_GUARD)
    return ((image - mean) / std).astype(np.float32)


def preprocess(sample: VolumeSample) -> VolumeSample:
    """Crop to the nonzero bounding box, then per-channel z-score"""
    cropped = crop_to_nonzero(sample)
    cropped.image = zscore(cropped.image.astype(np.float64))
    return cropped


def uncrop(array: np.ndarray, sample: VolumeSample, fill: float = 0) -> np.ndarray:
    """Paste a cropped-space array (..., h, w, d) back into the original extent"""
    if sample.crop is None:
        return array
    lead = array.shape[:-3]
    full = np.full(lead + tuple(sample.original_extent), fill, dtype=array.dtype)
    region = tuple(slice(a, b) for a, b in sample.crop)
    full[(Ellipsis,) + region] = array
    return full


def flip(sample: VolumeSample, axis: int) -> VolumeSample:
    """Flip a spatial axis (0, 1, 2) of image and label together"""
    return sample.with_arrays(
        np.flip(sample.image, axis=axis + 1).copy(),
        np.flip(sample.label, axis=axis).copy(),
    )


def _gamma(image: np.ndarray, gamma: float) -> np.ndarray:
    out = np.empty_like(image)
    for c, channel in enumerate(image):
        low, high = channel.min(), channel.max()
        span = high - low
        if span <= 0:
            out[c] = channel
            continue
        out[c] = ((channel - low) / span) ** gamma * span + low
    return out


def augment(sample: VolumeSample, policy: AugmentPolicy, rng: np.random.Generator) -> VolumeSample:
    """
    Flips, then Gaussian noise, Gaussian smoothing, intensity scale, intensity
    shift and gamma, each applied with its own probability. Labels only follow
    the flips.
    """
    for axis in range(3):
        if rng.random() < policy.flip_p:
            sample = flip(sample, axis)
    image = sample.image.astype(np.float64)
    if rng.random() < policy.noise_p:
        variance = rng.uniform(*policy.noise_variance)
        image = image + rng.normal(0.0, np.sqrt(variance), size=image.shape)
    if rng.random() < policy.smooth_p:
        image = np.stack(
            [ndimage.gaussian_filter(channel, sigma=rng.uniform(*policy.smooth_sigma)) for channel in image]
        )
    if rng.random() < policy.scale_p:
        image = image * rng.uniform(*policy.scale_range)
    if rng.random() < policy.shift_p:
        image = image + rng.uniform(*policy.shift_range)
    if rng.random() < policy.gamma_p:
        image = _gamma(image, rng.uniform(*policy.gamma_range))
    return sample.with_arrays(image.astype(sample.image.dtype), sample.label)


def pad_to(sample: VolumeSample, size: Sequence[int]) -> VolumeSample:
    """Pad each image channel with its minimum and the label with background up to at least `size`"""
    extent = sample.label.shape
    padding = [(0, max(0, s - n)) for s, n in zip(size, extent)]
    if not any(after for _, after in padding):
        return sample
    logger.debug(f"Padding {sample.id} from {extent} to at least {tuple(size)}")
    image = np.stack([np.pad(channel, padding, constant_values=channel.min()) for channel in sample.image])
    return sample.with_arrays(image, np.pad(sample.label, padding))


def random_patch(sample: VolumeSample, patch_size: Sequence[int], rng: np.random.Generator) -> VolumeSample:
    """Crop image and label at the same uniformly random corner"""
    extent = sample.label.shape
    if any(p > n for p, n in zip(patch_size, extent)):
        raise UsageError(f"patch {tuple(patch_size)} is larger than volume {extent} of {sample.id}")
    corner = [int(rng.integers(0, n - p + 1)) for p, n in zip(patch_size, extent)]
    region = tuple(slice(c, c + p) for c, p in zip(corner, patch_size))
    return sample.with_arrays(sample.image[(slice(None),) + region], sample.label[region])
