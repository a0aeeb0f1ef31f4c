import math

import numpy as np
import pytest

from factorizer.services.metrics import (
    class_masks,
    dice_score,
    evaluate_case,
    hausdorff_distance,
    hd95,
    mean_dice,
    surface,
)


def brute_force_surface(mask):
    padded = np.pad(mask, 1)
    points = []
    for i, j, k in np.argwhere(mask):
        neighbors = [
            padded[i + 1 + di, j + 1 + dj, k + 1 + dk]
            for di, dj, dk in [(1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)]
        ]
        if not all(neighbors):
            points.append((i, j, k))
    return points


def brute_force_hd(g, y, spacing, percentile):
    sg, sy = brute_force_surface(g), brute_force_surface(y)
    scale = np.asarray(spacing)

    def directed(a, b):
        return [min(np.linalg.norm((np.subtract(p, q)) * scale) for q in b) for p in a]

    return max(np.percentile(directed(sg, sy), percentile), np.percentile(directed(sy, sg), percentile))


def random_mask(rng, shape, count):
    mask = np.zeros(shape, dtype=bool)
    flat = rng.choice(mask.size, size=count, replace=False)
    mask.flat[flat] = True
    return mask


def test_dice_examples():
    assert dice_score(np.array([1, 1, 0, 0]), np.array([1, 0, 1, 0])) == 0.5
    assert dice_score(np.zeros(5), np.zeros(5)) == 1.0
    mask = np.array([0, 1, 1])
    assert dice_score(mask, mask) == 1.0


def test_dice_is_symmetric_and_bounded():
    rng = np.random.default_rng(0)
    for _ in range(20):
        g, y = random_mask(rng, (4, 4, 4), 10), random_mask(rng, (4, 4, 4), 15)
        value = dice_score(g, y)
        assert value == dice_score(y, g)
        assert 0.0 <= value <= 1.0


def test_surface_matches_brute_force():
    rng = np.random.default_rng(1)
    mask = random_mask(rng, (5, 5, 5), 60)
    assert sorted(map(tuple, np.argwhere(surface(mask)))) == sorted(brute_force_surface(mask))


def test_full_volume_surface_is_its_border():
    mask = np.ones((3, 3, 3), dtype=bool)
    assert surface(mask).sum() == 26


def test_identical_masks_have_zero_distance():
    mask = random_mask(np.random.default_rng(2), (6, 6, 6), 30)
    assert hd95(mask, mask) == 0.0


def test_single_voxels_at_distance_three():
    g = np.zeros((8, 8, 8), dtype=bool)
    y = np.zeros((8, 8, 8), dtype=bool)
    g[1, 2, 2] = True
    y[4, 2, 2] = True
    assert hd95(g, y) == 3.0


def test_spacing_scales_distances():
    g = np.zeros((4, 8, 4), dtype=bool)
    y = np.zeros((4, 8, 4), dtype=bool)
    g[1, 1, 1] = True
    y[1, 5, 1] = True
    assert hd95(g, y, spacing=(1.0, 0.5, 2.0)) == 2.0


@pytest.mark.parametrize("seed", range(5))
def test_hausdorff_matches_all_pairs_oracle(seed):
    rng = np.random.default_rng(seed)
    g, y = random_mask(rng, (5, 6, 7), 20), random_mask(rng, (5, 6, 7), 20)
    spacing = (1.0, 1.5, 0.75)
    assert hd95(g, y, spacing) == pytest.approx(brute_force_hd(g, y, spacing, 95), rel=1e-12)
    full = hausdorff_distance(g, y, spacing)
    assert full == pytest.approx(brute_force_hd(g, y, spacing, 100), rel=1e-12)
    assert hd95(g, y, spacing) <= full
    assert hd95(g, y, spacing) == hd95(y, g, spacing)


def test_empty_mask_conventions():
    empty = np.zeros((3, 3, 3), dtype=bool)
    other = empty.copy()
    other[1, 1, 1] = True
    assert hd95(empty, empty) == 0.0
    assert math.isnan(hd95(empty, other))
    assert math.isnan(hd95(other, empty))


def test_class_masks_nested():
    label = np.array([0, 1, 2, 3])
    exclusive = class_masks(label, [1, 2, 3])
    nested = class_masks(label, [1, 2, 3], nested=True)
    assert exclusive[2].tolist() == [False, False, True, False]
    assert nested[2].tolist() == [False, False, True, True]


def test_evaluate_case_rows():
    truth = np.zeros((4, 4, 4), dtype=np.int64)
    truth[1:3, 1:3, 1:3] = 1
    prediction = truth.copy()
    prediction[0, 0, 0] = 2
    rows = evaluate_case("eval-000", truth, prediction, [1, 2])
    assert [(row["case"], row["class"]) for row in rows] == [("eval-000", 1), ("eval-000", 2)]
    assert rows[0]["dice"] == 1.0 and rows[0]["hd95"] == 0.0
    assert rows[1]["dice"] == 0.0 and math.isnan(rows[1]["hd95"])
    assert mean_dice(rows) == 0.5
    assert mean_dice(rows, classes=[1]) == 1.0


def test_cube_against_shifted_cube():
    g = np.zeros((10, 10, 10), dtype=bool)
    g[2:6, 2:6, 2:6] = True
    y = np.roll(g, 2, axis=0)
    expected = brute_force_hd(g, y, (1.0, 1.0, 1.0), 95)
    assert hd95(g, y) == pytest.approx(expected)
    assert hd95(g, y) == hd95(y, g)
