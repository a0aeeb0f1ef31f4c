import logging
from pathlib import Path
from typing import Dict, Optional, Sequence, Union

import numpy as np

from factorizer.autograd import ftensor
from factorizer.autograd.tensor import Tensor, no_grad
from factorizer.exceptions import UsageError
from factorizer.models.network import Factorizer

logger = logging.getLogger(__name__)


def capture_components(
    model: Factorizer, image: np.ndarray, layers: Optional[Sequence[int]] = None
) -> Dict[int, np.ndarray]:
    """
    Spatial NMF factors of one window as image-shaped maps, per NMF layer.

    `image` is (C, H, W, D) at the model's patch size. Each map is
    (heads * R, h, w, d) at the resolution of its layer.
    """
    blocks = model.blocks()
    indices = list(layers) if layers else list(range(1, len(blocks) + 1))
    unknown = [i for i in indices if not 1 <= i <= len(blocks)]
    if unknown:
        raise UsageError(f"unknown NMF layer indices {unknown}; valid range is 1..{len(blocks)}")
    model.capture_components(True)
    try:
        with no_grad():
            model(Tensor(np.asarray(image, dtype=np.dtype(model.cfg.dtype))[None]), training=False)
        maps = {}
        for i in indices:
            component = blocks[i - 1].wrapped_nmf.component_maps()
            if component is None:
                logger.warning(f"NMF layer {i} did not run (short-circuited or disabled)")
                continue
            maps[i] = component[0]
    finally:
        model.capture_components(False)
    return maps


def dump_components(maps: Dict[int, np.ndarray], directory: Union[str, Path]) -> None:
    directory = Path(directory)
    for index, array in maps.items():
        ftensor.save(directory / f"layer-{index:02d}.ft", array.astype(np.float32))
    logger.info(f"Wrote component maps of {len(maps)} NMF layers to {directory}")
