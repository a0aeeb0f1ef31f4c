import numpy as np
import pytest

from factorizer.exceptions import FormatError, GenerationError, UsageError
from factorizer.schemas import SyntheticTaskSpec
from factorizer.schemas.config import AugmentPolicy
from factorizer.services import dataset_io
from factorizer.services.synthetic import VolumeSample, generate, generate_sample
from factorizer.services.transforms import (
    augment,
    crop_to_nonzero,
    flip,
    nonzero_bbox,
    pad_to,
    preprocess,
    random_patch,
    uncrop,
    zscore,
)


@pytest.fixture
def spec():
    return SyntheticTaskSpec(
        extent=32, channels=2, classes=2, blob_count=(1, 2), blob_radius=(2.0, 4.0), train_samples=4, eval_samples=2
    )


def make_sample(image, label=None, sample_id="case"):
    if label is None:
        label = np.zeros(image.shape[1:], dtype=np.int64)
    return VolumeSample(image=image, label=label, id=sample_id)


def test_generation_is_deterministic(spec):
    """Same seed, same dataset, bit for bit"""
    first, second = generate(spec), generate(spec)
    assert [s.id for s in first] == ["train-000", "train-001", "train-002", "train-003"]
    for a, b in zip(first, second):
        assert np.array_equal(a.image, b.image) and np.array_equal(a.label, b.label)


def test_splits_and_seeds_differ(spec):
    train = generate_sample(spec, 0, "train")
    evaluation = generate_sample(spec, 0, "eval")
    reseeded = generate_sample(spec.updated(seed=1), 0, "train")
    assert evaluation.id == "eval-000"
    assert not np.array_equal(train.image, evaluation.image)
    assert not np.array_equal(train.image, reseeded.image)
    with pytest.raises(GenerationError):
        generate(spec, "test")


def test_sample_layout(spec):
    sample = generate_sample(spec, 1)
    assert sample.image.shape == (2, 32, 32, 32) and sample.image.dtype == np.float32
    assert sample.label.shape == (32, 32, 32)
    assert set(np.unique(sample.label)) <= {0, 1, 2}
    # Nothing leaks into the zero margin
    assert not sample.image[:, :4].any() and not sample.image[:, :, :, -4:].any()


def test_class_contrast_is_measurable():
    spec = SyntheticTaskSpec(extent=48, classes=2, soft_edge=0.0, blob_count=(1, 2), train_samples=10)
    samples = generate(spec)
    body = (slice(4, 44),) * 3
    background = np.concatenate([s.image[0][body][s.label[body] == 0] for s in samples])
    for k, expected in enumerate([row[0] for row in spec.class_contrast()], start=1):
        lesion = np.concatenate([s.image[0][s.label == k] for s in samples])
        assert lesion.size > 0
        assert lesion.mean() - background.mean() == pytest.approx(expected, abs=0.1)


def test_zero_blobs_give_background_labels(spec):
    sample = generate_sample(spec.updated(blob_count=(0, 0)), 0)
    assert not sample.label.any()


@pytest.mark.parametrize(
    "changes",
    [{"blob_radius": (20.0, 22.0)}, {"blob_count": (40, 40), "blob_radius": (4.0, 4.0), "max_attempts": 20}],
)
def test_impossible_packing_is_generation_error(spec, changes):
    with pytest.raises(GenerationError):
        generate_sample(spec.updated(**changes), 0)


def test_crop_matches_brute_force_bounding_box():
    rng = np.random.default_rng(0)
    image = np.zeros((2, 10, 12, 9))
    image[0, 2:7, 3:5, 1:8] = rng.normal(size=(5, 2, 7))
    image[1, 4, 9, 2] = 1.0
    lows, highs = [], []
    for axis in range(3):
        hits = [i for i in range(image.shape[axis + 1]) if np.take(image, i, axis=axis + 1).any()]
        lows.append(min(hits))
        highs.append(max(hits) + 1)
    assert nonzero_bbox(image) == tuple(zip(lows, highs))
    cropped = crop_to_nonzero(make_sample(image))
    assert cropped.image.shape == (2, 5, 7, 7)
    assert cropped.original_extent == (10, 12, 9)


def test_tight_image_crop_is_identity():
    image = np.random.default_rng(1).uniform(1, 2, size=(1, 4, 4, 4))
    cropped = crop_to_nonzero(make_sample(image))
    assert np.array_equal(cropped.image, image)


def test_zscore_statistics():
    image = np.random.default_rng(2).normal(3.0, 5.0, size=(2, 8, 8, 8))
    normalized = zscore(image).astype(np.float64)
    assert np.abs(normalized.mean(axis=(1, 2, 3))).max() < 1e-5
    assert np.abs(normalized.std(axis=(1, 2, 3)) - 1).max() < 1e-5


def test_zscore_constant_channel_is_finite():
    assert np.isfinite(zscore(np.ones((1, 2, 2, 2)))).all()


def test_preprocess_and_uncrop_round_trip(spec):
    sample = generate_sample(spec, 0)
    prepared = preprocess(sample)
    assert prepared.crop == ((4, 28),) * 3
    restored = uncrop(prepared.label, prepared)
    assert np.array_equal(restored, sample.label)


def test_disabled_augmentation_is_identity(spec):
    sample = generate_sample(spec, 0)
    out = augment(sample, AugmentPolicy.disabled(), np.random.default_rng(0))
    assert np.array_equal(out.image, sample.image) and np.array_equal(out.label, sample.label)


def test_double_flip_is_identity(spec):
    sample = generate_sample(spec, 0)
    for axis in range(3):
        twice = flip(flip(sample, axis), axis)
        assert np.array_equal(twice.image, sample.image) and np.array_equal(twice.label, sample.label)


def test_flip_moves_label_with_image(spec):
    sample = generate_sample(spec, 2)
    flipped = flip(sample, 1)
    mask = sample.label > 0
    assert np.array_equal(flipped.label > 0, np.flip(mask, axis=1))
    assert np.array_equal(flipped.image[0][flipped.label > 0], np.flip(sample.image[0], axis=1)[np.flip(mask, axis=1)])


def test_noise_variance_matches_policy():
    image = np.random.default_rng(3).normal(size=(1, 50, 50, 40))
    sample = make_sample(image)
    policy = AugmentPolicy.disabled().updated(noise_p=1.0, noise_variance=(0.05, 0.05))
    out = augment(sample, policy, np.random.default_rng(4))
    assert np.var(out.image - image) == pytest.approx(0.05, rel=0.1)
    assert np.array_equal(out.label, sample.label)


def test_intensity_augmentations_leave_labels(spec):
    sample = generate_sample(spec, 0)
    policy = AugmentPolicy(flip_p=0.0, noise_p=1.0, smooth_p=1.0, scale_p=1.0, shift_p=1.0, gamma_p=1.0)
    out = augment(sample, policy, np.random.default_rng(5))
    assert np.array_equal(out.label, sample.label)
    assert not np.array_equal(out.image, sample.image)


def test_gamma_keeps_channel_range():
    image = np.random.default_rng(6).uniform(-2, 3, size=(2, 4, 4, 4))
    policy = AugmentPolicy.disabled().updated(gamma_p=1.0)
    out = augment(make_sample(image), policy, np.random.default_rng(7)).image
    np.testing.assert_allclose(out.min(axis=(1, 2, 3)), image.min(axis=(1, 2, 3)))
    np.testing.assert_allclose(out.max(axis=(1, 2, 3)), image.max(axis=(1, 2, 3)))


def test_full_patch_is_identity(spec):
    sample = generate_sample(spec, 0)
    patch = random_patch(sample, (32, 32, 32), np.random.default_rng(0))
    assert np.array_equal(patch.image, sample.image)


def test_patch_corners_are_uniform():
    sample = make_sample(np.arange(17 * 16 * 16, dtype=np.float64).reshape(1, 17, 16, 16))
    rng = np.random.default_rng(8)
    corners = [random_patch(sample, (16, 16, 16), rng).image[0, 0, 0, 0] != 0 for _ in range(1000)]
    ones = sum(corners)
    chi_square = ((ones - 500) ** 2 + (1000 - ones - 500) ** 2) / 500
    assert chi_square < 10.83


def test_patch_keeps_interior_lesion():
    image = np.zeros((1, 20, 20, 20))
    label = np.zeros((20, 20, 20), dtype=np.int64)
    label[9:11, 9:11, 9:11] = 1
    image[0][label > 0] = 1.0
    patch = random_patch(make_sample(image, label), (16, 16, 16), np.random.default_rng(9))
    assert (patch.label > 0).sum() == 8
    assert np.array_equal(patch.image[0] > 0, patch.label > 0)


def test_oversized_patch_is_usage_error(spec):
    with pytest.raises(UsageError):
        random_patch(generate_sample(spec, 0), (48, 32, 32), np.random.default_rng(0))


def test_pad_to_grows_small_volumes():
    padded = pad_to(make_sample(np.ones((1, 10, 16, 16))), (16, 16, 16))
    assert padded.image.shape == (1, 16, 16, 16) and padded.label.shape == (16, 16, 16)


def test_pad_to_fills_with_channel_background():
    image = zscore(np.stack([np.arange(1000.0).reshape(10, 10, 10), np.full((10, 10, 10), 3.0)]))
    image[1, 0, 0, 0] = -5.0
    label = np.ones((10, 10, 10), dtype=np.int64)
    padded = pad_to(make_sample(image, label), (16, 12, 10))
    assert padded.image.shape == (2, 16, 12, 10)
    assert np.array_equal(padded.image[:, :10, :10], image)
    for channel in range(2):
        fill = padded.image[channel, 10:]
        assert np.all(fill == image[channel].min())
        assert np.all(padded.image[channel, :, 10:] == image[channel].min())
    assert padded.image[1, 12, 0, 0] == -5.0
    assert padded.label[10:].sum() == 0 and padded.label[:, 10:].sum() == 0


def test_dataset_round_trip(tmp_path, spec):
    samples = generate(spec, "eval")
    dataset_io.save_dataset(samples, tmp_path / "eval")
    loaded = dataset_io.load_dataset(tmp_path / "eval")
    assert [s.id for s in loaded] == ["eval-000", "eval-001"]
    for original, restored in zip(samples, loaded):
        assert np.array_equal(original.image, restored.image)
        assert np.array_equal(original.label, restored.label)
        assert restored.spacing == (1.0, 1.0, 1.0)


def test_meta_file_is_read_like_a_config(tmp_path, spec):
    sample = generate_sample(spec, 0)
    directory = dataset_io.save_sample(sample, tmp_path)
    meta = directory / dataset_io.META_FILE
    assert meta.read_text() == f"id = {sample.id}\nspacing = 1.0, 1.0, 1.0\n"
    meta.write_text(f"# resampled\nid = {sample.id}\nspacing = 0.8, 0.8, 2.5  # mm\n")
    assert dataset_io.load_sample(directory).spacing == (0.8, 0.8, 2.5)
    meta.write_text("id\n")
    with pytest.raises(FormatError):
        dataset_io.load_sample(directory)


def test_prediction_round_trip(tmp_path):
    labels = np.random.default_rng(0).integers(0, 3, size=(4, 4, 4))
    dataset_io.save_prediction(tmp_path, "eval-000", labels, np.zeros((3, 4, 4, 4)))
    assert np.array_equal(dataset_io.load_prediction(tmp_path, "eval-000"), labels)


def test_missing_dataset(tmp_path):
    with pytest.raises(FormatError):
        dataset_io.load_dataset(tmp_path / "absent")
    (tmp_path / "empty").mkdir()
    with pytest.raises(FormatError):
        dataset_io.load_dataset(tmp_path / "empty")
