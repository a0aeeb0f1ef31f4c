import logging

import numpy as np
import pytest

from factorizer.models import build
from factorizer.schemas import FactorizerConfig, OutputMode, SyntheticTaskSpec
from factorizer.schemas.config import BlendMode, InferConfig
from factorizer.services.inference import (
    blend_weights,
    finalize,
    predict_sample,
    predict_tile,
    sliding_window_infer,
    tile_starts,
)
from factorizer.services.synthetic import generate_sample


@pytest.fixture
def model():
    cfg = FactorizerConfig(in_channels=2, base_channels=4, out_channels=3, head_dim=2, patch=2, patch_size=16)
    return build(cfg, seed=0).eval()


def random_image(*extent, seed=0):
    return np.random.default_rng(seed).normal(size=(2,) + extent).astype(np.float32)


def test_tile_starts():
    assert tile_starts(96, 64, 0.5) == [0, 32]
    assert tile_starts(64, 64, 0.5) == [0]
    assert tile_starts(16, 64, 0.5) == [0]
    assert tile_starts(100, 64, 0.5) == [0, 32, 36]
    assert tile_starts(48, 16, 0.0) == [0, 16, 32]


def test_blend_weights():
    assert np.array_equal(blend_weights((4, 4, 4), BlendMode.CONSTANT), np.ones((4, 4, 4)))
    gaussian = blend_weights((16, 16, 16), BlendMode.GAUSSIAN)
    assert gaussian.max() == pytest.approx(1.0)
    assert gaussian.min() >= 1e-3
    assert np.allclose(gaussian, gaussian[::-1, ::-1, ::-1])
    assert gaussian[8, 8, 8] > gaussian[0, 8, 8]


def test_single_tile_matches_direct_prediction(model):
    image = random_image(16, 16, 16)
    result = sliding_window_infer(model, image, InferConfig(), (16, 16, 16))
    direct = predict_tile(model, image, OutputMode.SOFTMAX)
    np.testing.assert_allclose(result.probabilities, direct, rtol=1e-6, atol=1e-7)
    assert np.array_equal(result.labels, direct.argmax(axis=0))


def test_voxels_seen_by_one_tile_keep_its_prediction(model):
    image = random_image(32, 16, 16, seed=1)
    result = sliding_window_infer(model, image, InferConfig(overlap=0.5), (16, 16, 16))
    first = predict_tile(model, image[:, :16], OutputMode.SOFTMAX)
    last = predict_tile(model, image[:, 16:], OutputMode.SOFTMAX)
    np.testing.assert_allclose(result.probabilities[:, :8], first[:, :8], rtol=1e-6, atol=1e-7)
    np.testing.assert_allclose(result.probabilities[:, 24:], last[:, 8:], rtol=1e-6, atol=1e-7)


@pytest.mark.parametrize("blend", [BlendMode.CONSTANT, BlendMode.GAUSSIAN])
def test_blended_probabilities_are_normalized(model, blend):
    image = random_image(32, 32, 16, seed=2)
    result = sliding_window_infer(model, image, InferConfig(blend=blend), (16, 16, 16))
    assert result.probabilities.shape == (3, 32, 32, 16)
    np.testing.assert_allclose(result.probabilities.sum(axis=0), 1.0, atol=1e-5)


def test_worker_count_does_not_change_the_result(model):
    image = random_image(32, 16, 16, seed=3)
    serial = sliding_window_infer(model, image, InferConfig(num_workers=1), (16, 16, 16))
    threaded = sliding_window_infer(model, image, InferConfig(num_workers=3), (16, 16, 16))
    assert np.array_equal(serial.probabilities, threaded.probabilities)


def test_small_volume_is_padded_then_cut_back(model, caplog):
    with caplog.at_level(logging.WARNING):
        result = sliding_window_infer(model, random_image(12, 12, 12), InferConfig(), (16, 16, 16))
    assert result.labels.shape == (12, 12, 12)
    assert "reflect-padding" in caplog.text


def test_sigmoid_labels_follow_nested_regions():
    probs = np.zeros((2, 1, 1, 3))
    probs[:, 0, 0, 0] = (0.2, 0.1)
    probs[:, 0, 0, 1] = (0.9, 0.2)
    probs[:, 0, 0, 2] = (0.9, 0.8)
    result = finalize(probs, OutputMode.SIGMOID, 0.5)
    assert result.labels[0, 0].tolist() == [0, 1, 2]
    assert result.binary.shape == probs.shape


def test_predict_sample_returns_original_grid(model):
    spec = SyntheticTaskSpec(extent=16, margin=2, blob_count=(1, 1), blob_radius=(1.5, 2.5), soft_edge=0.5)
    sample = generate_sample(spec, 0)
    result = predict_sample(model, sample, InferConfig(), (16, 16, 16))
    assert result.probabilities.shape == (3, 16, 16, 16)
    assert result.labels.shape == (16, 16, 16)
    # outside the crop nothing is predicted
    assert not result.labels[:2].any() and not result.binary[:, :, :, -2:].any()
