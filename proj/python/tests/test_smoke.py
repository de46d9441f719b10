import numpy as np
import pytest

import advoverlay as ao


def test_mask_counts_and_clipping():
    mask = ao.build_mask([(10, 10, 111, 37)], 128, 128)
    assert mask.shape == (128, 128)
    assert mask.dtype == np.bool_
    assert int(mask.sum()) == 37 * 111
    assert int(ao.build_mask([(120, 120, 20, 20)], 128, 128).sum()) == 64


def test_default_config_values():
    c = ao.AttackConfig()
    assert (c.mode, c.xi, c.alpha, c.iterations, c.channel_source) == ("multi-untargeted", 8.0, 2.0, 100, "average")
    with pytest.raises(ao.ConfigError):
        ao.AttackConfig(mode="one-targeted").validate(4)
    with pytest.raises(ao.ConfigError):
        ao.AttackConfig(mode="sideways")


def test_detect_is_deterministic():
    det = ao.Detector.toy(7)
    black = np.zeros((det.input_side, det.input_side, 3))
    assert det.detect(black) == ao.Detector.toy(7).detect(black)


def test_attack_stays_inside_mask_and_bound():
    det = ao.Detector.toy(3)
    image, objects = ao.generate_scene(11)
    assert image.shape == (128, 128, 3) and objects
    mask = ao.build_mask([(32, 32, 64, 64)], 128, 128)
    result = ao.run_attack(det, image, mask, ao.AttackConfig(iterations=3))
    adv = result["adversarial"]
    assert np.array_equal(adv[~mask], image[~mask])
    assert np.abs(adv - image).max() <= 8 / 255 + 1e-12
    assert len(result["loss"]) == 3
    assert result["report_csv"].startswith("iteration,loss,benign_boxes,adversarial_boxes")


def test_shape_errors_surface_as_value_errors():
    det = ao.Detector.toy(0)
    with pytest.raises(ValueError):
        det.detect(np.zeros((128, 128)))


def test_success_rate():
    assert ao.success_rate([2, 5, None], 4) == pytest.approx(1 / 3)
