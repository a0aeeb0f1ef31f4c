import math

import numpy as np
import pytest

from factorizer.autograd import Tensor, gradcheck
from factorizer.exceptions import UsageError
from factorizer.models.network import NetworkOutput
from factorizer.schemas import OutputMode
from factorizer.services.losses import (
    DICE_EPS,
    cross_entropy_loss,
    downsample_target,
    encode_target,
    one_hot,
    region_targets,
    segmentation_loss,
    soft_dice_loss,
    target_pyramid,
    total_loss,
)


def test_soft_dice_of_perfect_prediction_is_zero():
    g = np.array([1.0, 0.0, 1.0, 1.0])
    assert soft_dice_loss(g, Tensor(g)).item() == pytest.approx(0.0, abs=1e-6)


def test_soft_dice_of_empty_masks_is_zero():
    assert soft_dice_loss(np.zeros(4), Tensor(np.zeros(4))).item() == 0.0


def test_soft_dice_hand_value():
    """G=[1,0], P=[0.5,0.5] gives one third"""
    value = soft_dice_loss(np.array([1.0, 0.0]), Tensor([0.5, 0.5])).item()
    expected = 1 - (2 * 0.5 + DICE_EPS) / (1 + 0.5 + DICE_EPS)
    assert value == pytest.approx(expected, rel=1e-12)
    assert value == pytest.approx(1 / 3, abs=1e-4)


def test_soft_dice_gradient():
    g = np.random.default_rng(0).integers(0, 2, size=(2, 3, 4)).astype(np.float64)
    p = Tensor(np.random.default_rng(1).uniform(size=(2, 3, 4)))
    for analytic, numeric in gradcheck(lambda prob: soft_dice_loss(g, prob), [p]):
        assert np.linalg.norm(analytic - numeric) / np.linalg.norm(numeric) < 1e-6


def test_cross_entropy_values():
    assert cross_entropy_loss(np.array([1.0]), Tensor([0.5])).item() == pytest.approx(math.log(2))
    g = np.array([[1.0, 0.0], [0.0, 1.0]])
    assert cross_entropy_loss(g, Tensor(g)).item() == pytest.approx(0.0, abs=1e-12)


def test_cross_entropy_matches_naive_loop():
    rng = np.random.default_rng(2)
    labels = rng.integers(0, 3, size=(1, 2, 3, 2))
    g = one_hot(labels, 3, np.float64)
    p = rng.uniform(0.01, 1.0, size=g.shape)
    naive = 0.0
    for index in np.ndindex(g.shape):
        naive -= g[index] * math.log(p[index])
    voxels = labels.size
    assert cross_entropy_loss(g, Tensor(p)).item() == pytest.approx(naive / voxels, rel=1e-12)


def test_cross_entropy_class_rows_normalize_by_voxels():
    """(J, N) input with J != N averages over the N columns"""
    g = np.array([[1.0, 0.0, 0.0, 1.0, 0.0], [0.0, 1.0, 0.0, 0.0, 1.0]])
    p = np.full(g.shape, 0.5)
    expected = 4 * math.log(2) / 5
    assert cross_entropy_loss(g, Tensor(p)).item() == pytest.approx(expected, rel=1e-12)
    batched = cross_entropy_loss(g.reshape(1, 2, 5, 1, 1), Tensor(p.reshape(1, 2, 5, 1, 1)))
    assert batched.item() == pytest.approx(expected, rel=1e-12)


def test_cross_entropy_clamps_zero_probability():
    value = cross_entropy_loss(np.array([1.0]), Tensor([0.0])).item()
    assert value == pytest.approx(-math.log(1e-12))


def test_shape_mismatch_is_usage_error():
    with pytest.raises(UsageError):
        soft_dice_loss(np.zeros(3), Tensor(np.zeros(4)))


def test_one_hot_and_regions():
    label = np.array([[[[0, 1], [2, 2]]]])
    encoded = one_hot(label, 3)
    assert encoded.shape == (1, 3, 1, 2, 2)
    assert encoded.sum(axis=1).max() == 1
    regions = region_targets(label, 3)
    assert regions.shape == (1, 2, 1, 2, 2)
    # region k contains region k+1
    assert (regions[:, 0] >= regions[:, 1]).all()
    assert encode_target(label, 2, OutputMode.SIGMOID).shape == (1, 2, 1, 2, 2)
    with pytest.raises(UsageError):
        one_hot(label, 2)


def test_downsample_keeps_small_lesions():
    target = np.zeros((1, 1, 4, 4, 4))
    target[0, 0, 3, 0, 1] = 1
    pooled = downsample_target(target)
    assert pooled.shape == (1, 1, 2, 2, 2)
    assert pooled[0, 0, 1, 0, 0] == 1 and pooled.sum() == 1
    assert [t.shape[2:] for t in target_pyramid(np.zeros((1, 2, 8, 8, 8)))] == [(8, 8, 8), (4, 4, 4), (2, 2, 2)]


def _pyramid_case(seed):
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, 3, size=(1, 8, 8, 8))
    targets = target_pyramid(one_hot(labels, 3, np.float64))
    logits = [Tensor(rng.normal(size=t.shape)) for t in targets]
    return targets, logits


def test_total_loss_weights_against_naive_sum():
    targets, logits = _pyramid_case(3)
    output = NetworkOutput(logits=logits[0], aux=logits[1:])
    naive = sum(
        w * segmentation_loss(l, t, OutputMode.SOFTMAX).item() for w, l, t in zip((1.0, 0.5, 0.25), logits, targets)
    )
    assert total_loss(output, targets, OutputMode.SOFTMAX).item() == pytest.approx(naive, rel=1e-12)


def test_total_loss_without_aux_is_full_resolution_loss():
    targets, logits = _pyramid_case(4)
    full = segmentation_loss(logits[0], targets[0], OutputMode.SOFTMAX).item()
    assert total_loss(NetworkOutput(logits=logits[0]), targets, OutputMode.SOFTMAX).item() == pytest.approx(full)


def test_identical_scale_losses_sum_to_one_point_seven_five():
    rng = np.random.default_rng(5)
    target = one_hot(rng.integers(0, 2, size=(1, 4, 4, 4)), 2, np.float64)
    logits = Tensor(rng.normal(size=target.shape))
    single = segmentation_loss(logits, target, OutputMode.SOFTMAX).item()
    output = NetworkOutput(logits=logits, aux=[logits, logits])
    value = total_loss(output, [target] * 3, OutputMode.SOFTMAX).item()
    assert value == pytest.approx(1.75 * single, rel=1e-12)


def test_total_loss_scale_mismatch():
    targets, logits = _pyramid_case(6)
    output = NetworkOutput(logits=logits[0], aux=[logits[2], logits[1]])
    with pytest.raises(UsageError):
        total_loss(output, targets, OutputMode.SOFTMAX)
