import numpy as np
import pytest

from birdcall.augment import (FloatImage, RAW_GRAY, UNIT, add_noise,
                              minmax_normalize, pad_axis, random_crop,
                              random_scale, training_view, validation_view)
from birdcall.util import round_half_up


class StubRng:
    """Fixed-outcome stand-in for a numpy Generator."""

    def __init__(self, scale=1.0, noise=0.0, origin=0):
        self.scale = scale
        self.noise = noise
        self.origin = origin

    def uniform(self, low, high, size=None):
        if size is None:
            return self.scale
        return np.full(size, self.noise)

    def integers(self, low, high):
        return self.origin


def gray(rows, cols, seed=0):
    return np.random.default_rng(seed).integers(0, 256, (rows, cols)).astype(np.uint8)


def test_random_scale_bounds():
    rng = np.random.default_rng(1)
    img = gray(200, 300)
    for _ in range(50):
        out = random_scale(img, rng)
        assert round_half_up(200 * 0.9) <= out.pixels.shape[0] <= round_half_up(200 * 1.1)
        assert round_half_up(300 * 0.9) <= out.pixels.shape[1] <= round_half_up(300 * 1.1)
        assert out.range_tag == RAW_GRAY


def test_random_scale_axis_order():
    # first uniform draw scales rows, second scales columns
    class TwoDraws:
        def __init__(self):
            self.vals = [1.1, 0.9]

        def uniform(self, low, high, size=None):
            return self.vals.pop(0)

    out = random_scale(gray(100, 100), TwoDraws())
    assert out.pixels.shape == (110, 90)


def test_random_scale_identity_factor():
    out = random_scale(gray(50, 50), StubRng(scale=1.0))
    assert np.array_equal(out.pixels, gray(50, 50).astype(np.float64))


def test_pad_axis_wrap_tiles():
    img = np.arange(6, dtype=np.float64).reshape(2, 3)
    out = pad_axis(img, 1, 7, "wrap")
    assert out.shape == (2, 7)
    assert np.array_equal(out[:, 3:6], img)
    assert np.array_equal(out[:, 6], img[:, 0])
    assert pad_axis(img, 1, 2, "wrap") is img  # already wide enough


def test_pad_axis_zero():
    img = np.ones((2, 3))
    out = pad_axis(img, 0, 5, "zero")
    assert out.shape == (5, 3)
    assert out[2:].sum() == 0
    with pytest.raises(ValueError):
        pad_axis(img, 0, 5, "reflect")


def test_random_crop_undersized_pads_to_size():
    img = gray(100, 60)
    out = random_crop(img, StubRng(), size=256, pad_mode="wrap")
    assert out.pixels.shape == (256, 256)
    # wrap padding means the crop starts with the original content
    assert np.array_equal(out.pixels[:100, :60], img.astype(np.float64))


def test_random_crop_origin_from_rng():
    img = gray(300, 300)
    out = random_crop(img, StubRng(origin=10), size=256)
    assert np.array_equal(out.pixels, img[10:266, 10:266].astype(np.float64))
    rng = np.random.default_rng(0)
    for _ in range(20):
        assert random_crop(img, rng, size=256).pixels.shape == (256, 256)


def test_add_noise_needs_raw_range():
    img = FloatImage(np.zeros((4, 4)), UNIT)
    with pytest.raises(ValueError):
        add_noise(img, np.random.default_rng(0))


def test_add_noise_bounds_and_no_clamp():
    img = FloatImage(np.full((50, 50), 250.0), RAW_GRAY)
    out = add_noise(img, np.random.default_rng(3))
    delta = out.pixels - img.pixels
    assert delta.min() >= 0.0
    assert delta.max() <= 25.0
    assert out.pixels.max() > 255  # values may exceed 8-bit range pre-normalization


def test_minmax_normalize():
    out = minmax_normalize(FloatImage(np.array([[2.0, 4.0], [6.0, 10.0]]), RAW_GRAY))
    assert out.range_tag == UNIT
    assert out.pixels.min() == 0.0
    assert out.pixels.max() == 1.0
    assert out.pixels[0, 1] == pytest.approx(0.25)


def test_minmax_constant_goes_to_zeros():
    out = minmax_normalize(FloatImage(np.full((3, 3), 7.0), RAW_GRAY))
    assert np.array_equal(out.pixels, np.zeros((3, 3)))
    assert out.range_tag == UNIT


def test_training_view_contract():
    rng = np.random.default_rng(8)
    for _ in range(50):
        img = gray(int(rng.integers(60, 400)), int(rng.integers(60, 400)),
                   seed=int(rng.integers(1000)))
        view = training_view(img, rng)
        assert view.pixels.shape == (256, 256)
        assert view.pixels.min() == 0.0
        assert view.pixels.max() == 1.0
        assert view.range_tag == UNIT


def test_training_view_stubbed_equals_plain_normalization():
    img = gray(256, 256, seed=5)
    view = training_view(img, StubRng(scale=1.0, noise=0.0, origin=0))
    plain = minmax_normalize(FloatImage(img.astype(np.float64), RAW_GRAY))
    assert np.array_equal(view.pixels, plain.pixels)


def test_validation_view_is_crop_plus_normalize():
    img = gray(256, 300, seed=6)
    view = validation_view(img, StubRng(origin=0))
    plain = minmax_normalize(FloatImage(img[:, :256].astype(np.float64), RAW_GRAY))
    assert np.array_equal(view.pixels, plain.pixels)


def test_views_accept_gray_spectrogram_objects():
    from birdcall.spectrogram import GraySpectrogram

    img = GraySpectrogram(gray(256, 82), source="x")
    view = validation_view(img, np.random.default_rng(0))
    assert view.pixels.shape == (256, 256)
