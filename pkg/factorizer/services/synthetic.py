"""
Synthetic volumetric lesion segmentation data.

Each sample is a textured nonzero "body" box surrounded by a zero margin, with
non-overlapping soft-edged ellipsoids whose class sets a per-channel contrast.
"""
import logging
from dataclasses import dataclass, field, replace
from typing import List, Optional, Tuple

import numpy as np
from scipy import ndimage

from factorizer.exceptions import GenerationError
from factorizer.schemas.config import SyntheticTaskSpec
from factorizer.utils import rng as rng_utils

logger = logging.getLogger(__name__)

SPLITS = {"train": 0, "eval": 1}


@dataclass
class VolumeSample:
    image: np.ndarray
    label: np.ndarray
    id: str
    spacing: Tuple[float, float, float] = (1.0, 1.0, 1.0)
    # (start, stop) per spatial axis of the crop applied by preprocessing
    crop: Optional[Tuple[Tuple[int, int], ...]] = None
    original_extent: Optional[Tuple[int, int, int]] = None
    meta: dict = field(default_factory=dict)

    def with_arrays(self, image: np.ndarray, label: np.ndarray) -> "VolumeSample":
        return replace(self, image=image, label=label)


@dataclass
class Lesion:
    center: np.ndarray
    radii: np.ndarray
    cls: int

    @property
    def reach(self) -> float:
        return float(self.radii.max())


def _texture(rng: np.random.Generator, shape: Tuple[int, ...], sigma: float) -> np.ndarray:
    field_ = ndimage.gaussian_filter(rng.normal(size=shape), sigma=sigma)
    std = field_.std()
    return field_ / std if std > 0 else field_


def place_lesions(
    spec: SyntheticTaskSpec, rng: np.random.Generator, low: np.ndarray, high: np.ndarray
) -> List[Lesion]:
    """Rejection-sample non-overlapping ellipsoids fully inside [low, high)"""
    if spec.classes == 0:
        return []
    count = int(rng.integers(spec.blob_count[0], spec.blob_count[1] + 1))
    lesions: List[Lesion] = []
    for _ in range(count):
        for _attempt in range(spec.max_attempts):
            radii = rng.uniform(spec.blob_radius[0], spec.blob_radius[1], size=3)
            pad = radii + spec.soft_edge
            lo, hi = low + pad, high - 1 - pad
            if np.any(hi < lo):
                raise GenerationError(
                    f"lesion radii {np.round(radii, 2)} do not fit the body box {high - low}"
                )
            center = rng.uniform(lo, hi)
            candidate = Lesion(center=center, radii=radii, cls=int(rng.integers(1, spec.classes + 1)))
            clear = all(
                np.linalg.norm(center - other.center) > candidate.reach + other.reach + 2 * spec.soft_edge
                for other in lesions
            )
            if clear:
                lesions.append(candidate)
                break
        else:
            raise GenerationError(
                f"could not place lesion {len(lesions) + 1} of {count} after {spec.max_attempts} attempts"
            )
    return lesions


def generate_sample(spec: SyntheticTaskSpec, index: int, split: str = "train") -> "VolumeSample":
    rng = rng_utils.generator(rng_utils.STREAM_DATA, spec.seed, SPLITS[split], index)
    extent = np.asarray(spec.extent)
    margin = spec.margin
    low, high = np.full(3, margin), extent - margin
    if np.any(high - low < 1):
        raise GenerationError(f"margin {margin} leaves no body inside extent {spec.extent}")
    body = tuple(slice(int(a), int(b)) for a, b in zip(low, high))
    body_shape = tuple(int(b - a) for a, b in zip(low, high))

    image = np.zeros((spec.channels,) + tuple(spec.extent), dtype=np.float64)
    for c in range(spec.channels):
        tissue = 1.0 + 0.25 * _texture(rng, body_shape, spec.texture_sigma)
        image[(c,) + body] = tissue + rng.normal(0.0, spec.noise, size=body_shape)

    label = np.zeros(tuple(spec.extent), dtype=np.int64)
    contrast = np.asarray(spec.class_contrast(), dtype=np.float64)
    grid = np.stack(np.meshgrid(*(np.arange(n) for n in spec.extent), indexing="ij"), axis=-1)
    for lesion in place_lesions(spec, rng, low, high):
        rho = np.sqrt((((grid - lesion.center) / lesion.radii) ** 2).sum(axis=-1))
        inside = rho <= 1.0
        if spec.soft_edge > 0:
            outside_distance = (rho - 1.0) * lesion.reach
            weight = np.clip(1.0 - outside_distance / spec.soft_edge, 0.0, 1.0)
        else:
            weight = inside.astype(np.float64)
        weight[inside] = 1.0
        label[inside] = lesion.cls
        image += weight[None] * contrast[lesion.cls - 1][:, None, None, None]

    return VolumeSample(
        image=image.astype(np.float32),
        label=label,
        id=f"{split}-{index:03d}",
        spacing=tuple(float(s) for s in spec.spacing),
    )


def generate(spec: SyntheticTaskSpec, split: str = "train", count: Optional[int] = None) -> List[VolumeSample]:
    """Deterministic list of samples for a split"""
    if split not in SPLITS:
        raise GenerationError(f"unknown split '{split}', expected one of {sorted(SPLITS)}")
    if count is None:
        count = spec.train_samples if split == "train" else spec.eval_samples
    samples = [generate_sample(spec, index, split) for index in range(count)]
    logger.info(f"Generated {len(samples)} {split} samples of extent {spec.extent}")
    return samples
