"""Smoke tests for the Python bindings.

The heavy numerical verification lives in the C++ test suite; these only
check that the bound surface works end to end from Python.
"""

import numpy as np
import pytest

import cardseg


def test_normalize_and_crop():
    rng = np.random.default_rng(0)
    img = rng.uniform(0.0, 5.0, size=(20, 24))
    norm = cardseg.normalize_intensity(img)
    assert norm.shape == (20, 24)
    assert norm.min() >= 0.0 and norm.max() <= 1.0

    cropped = cardseg.center_crop(norm, 16, 16)
    assert cropped.shape == (16, 16)
    padded = cardseg.center_crop(norm, 32, 32)
    assert padded.shape == (32, 32)


def test_percentile_matches_numpy():
    values = [3.0, 1.0, 4.0, 1.0, 5.0, 9.0, 2.0, 6.0]
    for p in (0, 25, 50, 90, 100):
        assert cardseg.percentile(values, p) == pytest.approx(
            np.percentile(values, p, method="linear")
        )


def test_histogram_match_moves_distribution():
    rng = np.random.default_rng(1)
    source = np.clip(rng.normal(0.3, 0.05, size=(64, 64)), 0.0, 1.0)
    reference = np.clip(rng.normal(0.7, 0.05, size=(64, 64)), 0.0, 1.0)
    matched = cardseg.histogram_match(source, reference)
    assert matched.shape == source.shape
    assert matched.min() >= 0.0 and matched.max() <= 1.0
    assert abs(matched.mean() - reference.mean()) < 0.02


def test_geometric_ops_round_trip():
    rng = np.random.default_rng(2)
    img = rng.uniform(0.0, 1.0, size=(32, 32))
    mask = (rng.uniform(size=(32, 32)) * 4).astype(np.uint8)

    flipped_img, flipped_mask = cardseg.hflip(img, mask)
    twice_img, twice_mask = cardseg.hflip(flipped_img, flipped_mask)
    np.testing.assert_allclose(twice_img, img)
    np.testing.assert_array_equal(twice_mask, mask)

    rot_img, rot_mask = cardseg.rotate(img, mask, 90.0)
    back_img, back_mask = cardseg.rotate(rot_img, rot_mask, -90.0)
    np.testing.assert_allclose(back_img, img, atol=1e-9)
    np.testing.assert_array_equal(back_mask, mask)

    sharp = cardseg.sharpen(np.full((8, 8), 0.5), alpha=1.0)
    np.testing.assert_allclose(sharp, 0.5)


def test_dice_metrics():
    a = np.zeros((8, 8), dtype=np.uint8)
    b = np.zeros((8, 8), dtype=np.uint8)
    a[:4, :4] = 1
    b[:4, :] = 1
    assert cardseg.dice_coefficient(a, a, 1) == pytest.approx(1.0)
    assert cardseg.dice_coefficient(a, b, 1) == pytest.approx(2 * 16 / (16 + 32))
    assert cardseg.dice_coefficient(a, b, 3) == pytest.approx(1.0)  # both empty

    report = cardseg.evaluate_set(a[None], b[None], num_classes=4)
    assert report["per_class"][1] == pytest.approx(2 * 16 / (16 + 32))
    assert report["average"] == pytest.approx(2 * 16 / (16 + 32))


def test_phantom_slices_deterministic():
    images, masks, ids = cardseg.phantom_slices("A", patients=2, image_size=32, seed=7)
    assert images.shape == masks.shape == (12, 32, 32)  # 2 patients * 2 phases * 3 slices
    assert images.min() >= 0.0 and images.max() <= 1.0
    assert set(np.unique(masks)) <= {0, 1, 2, 3}
    assert len(ids) == 12 and ids[0].startswith("A000/")

    images2, _, _ = cardseg.phantom_slices("A", patients=2, image_size=32, seed=7)
    np.testing.assert_array_equal(images, images2)


def test_network_predict_fit_save_load(tmp_path):
    net = cardseg.Network(depth=1, base_filters=4, seed=3)
    assert net.parameter_count > 0
    assert net.config["residual"] is True

    images, masks, _ = cardseg.phantom_slices("A", patients=2, image_size=32, seed=11)
    pred_masks, probs = net.predict(images)
    assert pred_masks.shape == (12, 32, 32)
    assert probs.shape == (12, 4, 32, 32)
    np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-9)
    np.testing.assert_array_equal(pred_masks, probs.argmax(axis=1))

    result = net.fit(
        images[:8], masks[:8], images[8:], masks[8:],
        epochs=8, learning_rate=0.005, batch_size=4, seed=3,
    )
    assert result["best_val_dice"] > 0.2
    assert len(result["train_loss"]) == 8
    assert result["final_train_loss"] < result["train_loss"][0]

    path = str(tmp_path / "net.bin")
    net.save(path)
    loaded = cardseg.Network.load(path)
    loaded_masks, loaded_probs = loaded.predict(images)
    trained_masks, trained_probs = net.predict(images)
    np.testing.assert_array_equal(loaded_masks, trained_masks)
    np.testing.assert_allclose(loaded_probs, trained_probs)

    report = loaded.evaluate(images[8:], masks[8:])
    assert report["average"] == pytest.approx(result["best_val_dice"], abs=1e-9)
