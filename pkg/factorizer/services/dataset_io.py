"""
On-disk datasets: one directory per sample with image.ft, label.ft and meta.

`meta` is a key=value text file holding the sample id and voxel spacing.
"""
import logging
from pathlib import Path
from typing import List, Union

import numpy as np

from factorizer.autograd import ftensor
from factorizer.exceptions import ConfigurationError, FormatError
from factorizer.services.synthetic import VolumeSample
from factorizer.utils.config_file import format_value, read_config_file

logger = logging.getLogger(__name__)

IMAGE_FILE = "image.ft"
LABEL_FILE = "label.ft"
META_FILE = "meta"
PREDICTION_FILE = "prediction.ft"
PROBABILITIES_FILE = "probabilities.ft"


def save_sample(sample: VolumeSample, directory: Union[str, Path]) -> Path:
    directory = Path(directory) / sample.id
    directory.mkdir(parents=True, exist_ok=True)
    ftensor.save(directory / IMAGE_FILE, sample.image.astype(np.float32))
    ftensor.save(directory / LABEL_FILE, sample.label.astype(np.float32))
    spacing = format_value([float(s) for s in sample.spacing])
    (directory / META_FILE).write_text(f"id = {sample.id}\nspacing = {spacing}\n", encoding="utf-8")
    return directory


def save_dataset(samples: List[VolumeSample], directory: Union[str, Path]) -> None:
    for sample in samples:
        save_sample(sample, directory)
    logger.info(f"Saved {len(samples)} samples to {directory}")


def load_sample(directory: Union[str, Path]) -> VolumeSample:
    directory = Path(directory)
    meta_path = directory / META_FILE
    if not meta_path.exists():
        raise FormatError(f"sample directory {directory} has no meta file")
    try:
        meta = read_config_file(meta_path)
    except ConfigurationError as exc:
        raise FormatError(f"unreadable meta file: {exc}") from exc
    image = ftensor.load(directory / IMAGE_FILE)
    label = ftensor.load(directory / LABEL_FILE)
    if image.ndim != 4 or image.shape[1:] != label.shape:
        raise FormatError(f"{directory}: image {image.shape} does not match label {label.shape}")
    spacing = meta.get("spacing", [1.0, 1.0, 1.0])
    return VolumeSample(
        image=image.astype(np.float32),
        label=np.rint(label).astype(np.int64),
        id=str(meta.get("id", directory.name)),
        spacing=tuple(float(s) for s in spacing),
        meta=meta,
    )


def load_dataset(directory: Union[str, Path]) -> List[VolumeSample]:
    """All samples below `directory`, ordered by directory name"""
    directory = Path(directory)
    if not directory.is_dir():
        raise FormatError(f"dataset directory not found: {directory}")
    samples = [load_sample(path) for path in sorted(directory.iterdir()) if (path / META_FILE).exists()]
    if not samples:
        raise FormatError(f"no samples found in {directory}")
    logger.info(f"Loaded {len(samples)} samples from {directory}")
    return samples


def save_prediction(
    directory: Union[str, Path], case_id: str, labels: np.ndarray, probabilities: np.ndarray
) -> Path:
    case_dir = Path(directory) / case_id
    ftensor.save(case_dir / PREDICTION_FILE, labels.astype(np.float32))
    ftensor.save(case_dir / PROBABILITIES_FILE, probabilities.astype(np.float32))
    return case_dir


def load_prediction(directory: Union[str, Path], case_id: str) -> np.ndarray:
    return np.rint(ftensor.load(Path(directory) / case_id / PREDICTION_FILE)).astype(np.int64)
