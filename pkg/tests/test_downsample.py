import time

import numpy as np
import pytest

from pbpcc.downsample import DownsampleParams, equidistant_downsample
from pbpcc.estimators import PRESETS, gray_framework_estimate
from pbpcc.exceptions import DimensionError, ParameterError
from pbpcc.imaging import LinearImage

from conftest import random_image, uniform_image


def test_identity(rng):
    img = random_image(rng, 7, 9, mask_fraction=0.2)
    out = equidistant_downsample(img, 1)
    np.testing.assert_array_equal(out.data, img.data)
    np.testing.assert_array_equal(out.mask, img.mask)


def test_centers_10x10():
    data = np.zeros((10, 10, 3))
    data[..., 0] = np.arange(10)[:, None] / 10
    data[..., 1] = np.arange(10)[None, :] / 10
    out = equidistant_downsample(LinearImage.from_array(data), DownsampleParams(5))
    assert out.shape == (2, 2)
    np.testing.assert_allclose(out.data[:, 0, 0] * 10, [2, 7])
    np.testing.assert_allclose(out.data[0, :, 1] * 10, [2, 7])


def test_partial_blocks_dropped(rng):
    out = equidistant_downsample(random_image(rng, 11, 11), 5)
    assert out.shape == (2, 2)


@pytest.mark.parametrize("h,w,s", [(12, 17, 2), (9, 9, 3), (20, 13, 4), (8, 8, 8), (33, 40, 6)])
def test_index_rule_and_mask(rng, h, w, s):
    img = random_image(rng, h, w, mask_fraction=0.3)
    out = equidistant_downsample(img, s)
    assert out.shape == (h // s, w // s)
    for i in range(h // s):
        for j in range(w // s):
            r, c = i * s + s // 2, j * s + s // 2
            np.testing.assert_array_equal(out.data[i, j], img.data[r, c])
            assert out.mask[i, j] == img.mask[r, c]


def test_values_are_subset(rng):
    img = random_image(rng, 30, 41)
    out = equidistant_downsample(img, 4)
    original = {tuple(p) for p in img.data.reshape(-1, 3)}
    assert all(tuple(p) in original for p in out.data.reshape(-1, 3))


def test_too_small():
    with pytest.raises(DimensionError):
        equidistant_downsample(uniform_image((0.1, 0.1, 0.1), 3, 10), 4)


def test_bad_interval():
    with pytest.raises(ParameterError):
        DownsampleParams(0)


def test_gw_constant_image_unchanged():
    img = uniform_image((0.3, 0.6, 0.2), 40, 60)
    full = gray_framework_estimate(img, PRESETS["gw"])
    small = gray_framework_estimate(equidistant_downsample(img, 7), PRESETS["gw"])
    np.testing.assert_allclose(full.rgb, small.rgb, rtol=1e-12)


def _median_time(fn, repeats):
    fn()
    samples = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        samples.append(time.perf_counter() - t0)
    return float(np.median(samples))


@pytest.mark.slow
def test_gw_time_scales_inverse_square(rng):
    img = LinearImage.from_array(rng.uniform(size=(1080, 1920, 3)))
    gw = PRESETS["gw"]
    base = _median_time(lambda: gray_framework_estimate(img, gw), 7)
    for s in (4, 8):
        t = _median_time(lambda: gray_framework_estimate(equidistant_downsample(img, s), gw), 21)
        ratio = t / base
        assert 0.25 / s**2 <= ratio <= 4 / s**2, (s, ratio)
