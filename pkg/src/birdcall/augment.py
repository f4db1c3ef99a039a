"""Training-time and validation-time image views.

Training order is fixed: random +-10% axis scaling -> 256x256 random crop ->
additive uniform [0,25] noise -> per-image min-max normalization to [0,1].
Validation views only crop and normalize. Each image's range is tagged
(raw-gray vs unit) so out-of-order composition fails loudly.

All functions take an explicit rng so batch assembly can hand every sample
an independent deterministic stream. Any object with numpy-Generator style
``uniform``/``integers`` methods works, which keeps stubbed-randomness tests
trivial.
"""

from __future__ import annotations

from dataclasses import dataclass

import cv2
import numpy as np

from .spectrogram import GraySpectrogram
from .util import round_half_up

RAW_GRAY = "raw-gray"
UNIT = "unit"

CROP_SIZE = 256
SCALE_RANGE = (0.9, 1.1)
NOISE_RANGE = (0.0, 25.0)


@dataclass
class FloatImage:
    pixels: np.ndarray
    range_tag: str = RAW_GRAY

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.float64)


def _as_float(image) -> FloatImage:
    if isinstance(image, FloatImage):
        return image
    if isinstance(image, GraySpectrogram):
        return FloatImage(image.pixels.astype(np.float64), RAW_GRAY)
    return FloatImage(np.asarray(image, dtype=np.float64), RAW_GRAY)


def random_scale(image, rng, scale_range=SCALE_RANGE) -> FloatImage:
    """Independent row/column scale factors from U[0.9, 1.1], bilinear resample."""
    src = _as_float(image)
    rows, cols = src.pixels.shape
    if rows < 2 or cols < 2:
        raise ValueError("image must be at least 2x2")
    row_factor = rng.uniform(scale_range[0], scale_range[1])
    col_factor = rng.uniform(scale_range[0], scale_range[1])
    new_rows = max(1, round_half_up(rows * row_factor))
    new_cols = max(1, round_half_up(cols * col_factor))
    if (new_rows, new_cols) == (rows, cols):
        return FloatImage(src.pixels.copy(), src.range_tag)
    resized = cv2.resize(src.pixels, (new_cols, new_rows), interpolation=cv2.INTER_LINEAR)
    return FloatImage(resized, src.range_tag)


def pad_axis(pixels: np.ndarray, axis: int, target: int, pad_mode: str) -> np.ndarray:
    size = pixels.shape[axis]
    if size >= target:
        return pixels
    if pad_mode == "wrap":
        reps = [1, 1]
        reps[axis] = -(-target // size)  # ceil division
        tiled = np.tile(pixels, reps)
        index = [slice(None), slice(None)]
        index[axis] = slice(0, target)
        return tiled[tuple(index)]
    if pad_mode == "zero":
        widths = [(0, 0), (0, 0)]
        widths[axis] = (0, target - size)
        return np.pad(pixels, widths)
    raise ValueError(f"unknown pad_mode {pad_mode!r}")


def random_crop(image, rng, size: int = CROP_SIZE, pad_mode: str = "wrap") -> FloatImage:
    """Uniform-origin size x size crop; undersized axes are first padded to size.

    Wrap padding tiles the image along the short axis (repetition is a
    plausible continuation for calls and avoids black bands); zero padding is
    available as a config alternative.
    """
    src = _as_float(image)
    pixels = pad_axis(src.pixels, 0, size, pad_mode)
    pixels = pad_axis(pixels, 1, size, pad_mode)
    rows, cols = pixels.shape
    r0 = int(rng.integers(0, rows - size + 1)) if rows > size else 0
    c0 = int(rng.integers(0, cols - size + 1)) if cols > size else 0
    return FloatImage(pixels[r0:r0 + size, c0:c0 + size].copy(), src.range_tag)


def add_noise(image: FloatImage, rng, noise_range=NOISE_RANGE) -> FloatImage:
    """Add i.i.d. uniform noise per pixel, no clamping (normalization follows)."""
    if image.range_tag != RAW_GRAY:
        raise ValueError("noise must be added before min-max normalization")
    noise = rng.uniform(noise_range[0], noise_range[1], image.pixels.shape)
    return FloatImage(image.pixels + noise, RAW_GRAY)


def minmax_normalize(image) -> FloatImage:
    """Scale to min 0 / max 1 per image; a constant image maps to all zeros."""
    src = _as_float(image)
    lo = src.pixels.min()
    hi = src.pixels.max()
    if hi == lo:
        return FloatImage(np.zeros_like(src.pixels), UNIT)
    return FloatImage((src.pixels - lo) / (hi - lo), UNIT)


def training_view(image, rng, size: int = CROP_SIZE, pad_mode: str = "wrap",
                  scale_range=SCALE_RANGE, noise_range=NOISE_RANGE) -> FloatImage:
    """scale -> crop -> noise -> normalize; always size x size in [0, 1]."""
    view = random_scale(image, rng, scale_range)
    view = random_crop(view, rng, size, pad_mode)
    view = add_noise(view, rng, noise_range)
    return minmax_normalize(view)


def validation_view(image, rng, size: int = CROP_SIZE, pad_mode: str = "wrap") -> FloatImage:
    """crop -> normalize only; the caller keys rng per (epoch, sample index)."""
    view = random_crop(_as_float(image), rng, size, pad_mode)
    return minmax_normalize(view)
