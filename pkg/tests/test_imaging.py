import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from focusmap.errors import ConfigError, InputError
from focusmap.imaging import (SyntheticSpec, pixel_diff_map, resize_bilinear, sobel_map, ssim_map,
                              synth_pair)
from oracles import bilinear_reference, sobel_reference, ssim_reference

unit_floats = st.floats(0.0, 1.0, allow_nan=False)


def test_synth_area_fraction_in_range():
    spec = SyntheticSpec(image_size=32, patch_area_frac=0.2, seed=0)
    for index in range(20):
        _, fake = synth_pair(spec, index)
        assert 0.15 <= fake.gt_mask.sum() / 1024 <= 0.25


def test_synth_is_deterministic():
    spec = SyntheticSpec(seed=5)
    a_real, a_fake = synth_pair(spec, 17)
    b_real, b_fake = synth_pair(spec, 17)
    assert np.array_equal(a_real.pixels, b_real.pixels)
    assert np.array_equal(a_fake.pixels, b_fake.pixels)
    assert np.array_equal(a_fake.gt_mask, b_fake.gt_mask)


def test_synth_pair_metadata():
    real, fake = synth_pair(SyntheticSpec(), 3)
    assert (real.id, real.label, real.gt_mask) == ("000003_real", 0, None)
    assert (fake.id, fake.label) == ("000003_fake", 1)
    assert fake.gt_mask.dtype == np.uint8
    assert real.pixels.min() >= 0 and real.pixels.max() <= 1
    assert fake.pixels.min() >= 0 and fake.pixels.max() <= 1


def test_outside_mask_difference_is_global_noise():
    # frozen from 100 samples: half-normal mean of sigma=0.05 is 0.0399 before clipping
    spec = SyntheticSpec(global_noise_sigma=0.05, seed=0)
    diffs = []
    for index in range(100):
        real, fake = synth_pair(spec, index)
        outside = fake.gt_mask == 0
        diffs.append(np.abs(fake.pixels - real.pixels)[outside].mean())
    assert np.mean(diffs) == pytest.approx(0.04, abs=0.004)


def test_synth_spec_validation():
    with pytest.raises(ConfigError):
        SyntheticSpec(patch_area_frac=0.0).validate()
    with pytest.raises(ConfigError):
        SyntheticSpec(global_noise_sigma=-1).validate()


def test_sobel_constant_image_is_zero():
    assert np.all(sobel_map(np.full((8, 8, 3), 0.37)) == 0)


def test_sobel_vertical_step_edge():
    image = np.zeros((6, 6, 3))
    image[:, 3:] = 1.0
    out = sobel_map(image)
    # interior rows, the two columns that straddle the step
    assert out[2, 2, 0] == pytest.approx(0.70711, abs=1e-5)
    assert out[2, 3, 0] == pytest.approx(0.70711, abs=1e-5)
    assert out[2, 0, 0] == 0


def test_sobel_matches_reference(rng):
    image = rng.random((9, 7, 3))
    np.testing.assert_allclose(sobel_map(image), sobel_reference(image), atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, (6, 5, 3), elements=unit_floats))
def test_sobel_output_in_unit_interval(image):
    out = sobel_map(image)
    assert out.min() >= 0 and out.max() <= 1


def test_sobel_rejects_bad_shape():
    with pytest.raises(InputError):
        sobel_map(np.zeros((4, 4)))


def test_pixel_diff_identical_is_zero(rng):
    image = rng.random((8, 8, 3))
    assert np.all(pixel_diff_map(image, image) == 0)


def test_pixel_diff_region_offset():
    real = np.full((8, 8, 3), 0.5)
    fake = real.copy()
    fake[2:5, 2:5] += 0.2
    out = pixel_diff_map(real, fake)
    np.testing.assert_allclose(out[2:5, 2:5], 0.2)
    out[2:5, 2:5] = 0
    assert np.all(out == 0)


def test_pixel_diff_threshold_filters_noise():
    real = np.full((8, 8, 3), 0.4)
    fake = real + 0.05
    fake[1:3, 1:3] = real[1:3, 1:3] + 0.3
    out = pixel_diff_map(real, fake, threshold=0.1)
    np.testing.assert_allclose(out[1:3, 1:3], 0.3)
    out[1:3, 1:3] = 0
    assert np.all(out == 0)


def test_ssim_identical_images_give_zero(rng):
    image = rng.random((16, 16, 3))
    assert np.allclose(ssim_map(image, image), 0.0, atol=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_ssim_matches_reference(seed):
    rng = np.random.default_rng(seed)
    real = rng.random((16, 14, 3))
    fake = np.clip(real + rng.normal(0, 0.1, real.shape), 0, 1)
    np.testing.assert_allclose(ssim_map(real, fake), ssim_reference(real, fake), atol=1e-6)


def test_ssim_is_symmetric(rng):
    a, b = rng.random((12, 12, 3)), rng.random((12, 12, 3))
    np.testing.assert_allclose(ssim_map(a, b), ssim_map(b, a), atol=1e-12)


def test_ssim_rejects_small_images():
    with pytest.raises(InputError):
        ssim_map(np.zeros((8, 8, 3)), np.zeros((8, 8, 3)))


def test_resize_identity(rng):
    values = rng.random((5, 7))
    np.testing.assert_allclose(resize_bilinear(values, 5, 7), values, atol=1e-15)


def test_resize_ramp():
    out = resize_bilinear(np.array([[0.0, 1.0], [0.0, 1.0]]), 4, 4)
    for row in out:
        np.testing.assert_allclose(row, [0, 1 / 3, 2 / 3, 1], atol=1e-12)


@pytest.mark.parametrize("shape", [(1, 1), (3, 8), (8, 8), (1, 5), (13, 2)])
def test_resize_matches_reference(rng, shape):
    values = rng.random((4, 6))
    np.testing.assert_allclose(resize_bilinear(values, *shape), bilinear_reference(values, *shape), atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.floats(-5, 5), st.integers(1, 12), st.integers(1, 12))
def test_resize_constant_stays_constant(c, oh, ow):
    out = resize_bilinear(np.full((3, 4), c), oh, ow)
    assert np.all(out == c)


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, (4, 4), elements=unit_floats), st.integers(1, 16), st.integers(1, 16))
def test_resize_stays_within_input_range(values, oh, ow):
    out = resize_bilinear(values, oh, ow)
    assert out.min() >= values.min() and out.max() <= values.max()
