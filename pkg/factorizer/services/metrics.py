"""Overlap and surface-distance metrics on binary masks."""
import logging
from typing import Dict, List, Optional, Sequence

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

logger = logging.getLogger(__name__)

# 6-connectivity: a voxel is on the surface if a face neighbor is background
_FACE_NEIGHBORS = ndimage.generate_binary_structure(3, 1)


def dice_score(g: np.ndarray, y: np.ndarray) -> float:
    """2|g & y| / (|g| + |y|); 1.0 when both masks are empty"""
    g, y = np.asarray(g, dtype=bool), np.asarray(y, dtype=bool)
    if g.shape != y.shape:
        raise ValueError(f"mask shapes differ: {g.shape} vs {y.shape}")
    total = int(g.sum()) + int(y.sum())
    if total == 0:
        return 1.0
    return 2.0 * int((g & y).sum()) / total


def surface(mask: np.ndarray) -> np.ndarray:
    """Foreground voxels with a background face neighbor; outside the volume counts as background"""
    mask = np.asarray(mask, dtype=bool)
    if mask.ndim != 3:
        raise ValueError(f"surface extraction expects a 3D mask, got shape {mask.shape}")
    interior = ndimage.binary_erosion(mask, structure=_FACE_NEIGHBORS, border_value=0)
    return mask & ~interior


def directed_surface_distances(
    source: np.ndarray, target: np.ndarray, spacing: Sequence[float] = (1.0, 1.0, 1.0)
) -> np.ndarray:
    """Euclidean distance from each surface voxel of `source` to the nearest surface voxel of `target`"""
    scale = np.asarray(spacing, dtype=np.float64)
    source_points = np.argwhere(surface(source)) * scale
    target_points = np.argwhere(surface(target)) * scale
    distances, _ = cKDTree(target_points).query(source_points)
    return distances


def hausdorff_distance(
    g: np.ndarray,
    y: np.ndarray,
    spacing: Sequence[float] = (1.0, 1.0, 1.0),
    percentile: float = 100.0,
) -> float:
    """
    Symmetric surface distance: max of the two directed percentiles.

    Percentiles interpolate linearly between order statistics. Both masks empty
    gives 0.0; exactly one empty gives NaN (undefined, excluded from averages).
    """
    g, y = np.asarray(g, dtype=bool), np.asarray(y, dtype=bool)
    if g.shape != y.shape:
        raise ValueError(f"mask shapes differ: {g.shape} vs {y.shape}")
    g_empty, y_empty = not g.any(), not y.any()
    if g_empty and y_empty:
        return 0.0
    if g_empty or y_empty:
        return float("nan")
    forward = directed_surface_distances(g, y, spacing)
    backward = directed_surface_distances(y, g, spacing)
    return float(max(np.percentile(forward, percentile), np.percentile(backward, percentile)))


def hd95(g: np.ndarray, y: np.ndarray, spacing: Sequence[float] = (1.0, 1.0, 1.0)) -> float:
    return hausdorff_distance(g, y, spacing, percentile=95.0)


def class_masks(label: np.ndarray, classes: Sequence[int], nested: bool = False) -> Dict[int, np.ndarray]:
    """Binary mask per foreground class; nested regions use label >= k"""
    label = np.asarray(label)
    return {k: (label >= k) if nested else (label == k) for k in classes}


def evaluate_case(
    case_id: str,
    truth: np.ndarray,
    prediction: np.ndarray,
    classes: Sequence[int],
    spacing: Sequence[float] = (1.0, 1.0, 1.0),
    nested: bool = False,
) -> List[Dict[str, object]]:
    """One row per foreground class: case, class, dice, hd95"""
    truth_masks = class_masks(truth, classes, nested)
    predicted_masks = class_masks(prediction, classes, nested)
    rows = []
    for k in classes:
        rows.append(
            {
                "case": case_id,
                "class": int(k),
                "dice": dice_score(truth_masks[k], predicted_masks[k]),
                "hd95": hd95(truth_masks[k], predicted_masks[k], spacing),
            }
        )
    return rows


def mean_dice(rows: List[Dict[str, object]], classes: Optional[Sequence[int]] = None) -> float:
    values = [row["dice"] for row in rows if classes is None or row["class"] in classes]
    if not values:
        logger.warning("mean_dice called without rows")
        return float("nan")
    return float(np.mean(values))
