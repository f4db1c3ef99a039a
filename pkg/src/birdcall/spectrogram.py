"""Clip -> normalized 256-row grayscale spectrogram image.

Chain: Hamming-windowed STFT (frame 1024, hop 128) -> peak normalization to
1e8 -> log(1 + S) compression -> bilinear downsize to 256 rows -> 8-bit
quantization against the fixed ceiling log(1 + 1e8). The fixed ceiling keeps
pixel values comparable across the whole dataset; per-image [0,1] scaling
happens later in the augmentation stage.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import cv2
import numpy as np
from PIL import Image
from PIL.PngImagePlugin import PngInfo

from .audio_io import CANONICAL_RATE, AudioClip
from .errors import SilentSpectrogramError
from .util import round_half_up

log = logging.getLogger(__name__)

FRAME_LENGTH = 1024
HOP = 128
PEAK_NORM = 1e8
TARGET_ROWS = 256
LOG_CEILING = float(np.log1p(PEAK_NORM))

# Image files store row 0 = highest frequency so the rendered PNG shows low
# frequencies at the bottom; the note goes into the PNG text chunk.
ORIENTATION_NOTE = "rows=frequency top-to-bottom (row 0 = highest); cols=time"


@dataclass
class RawSpectrogram:
    """Magnitude (or power) grid: rows = frequency bins 0..frame_length/2, cols = frames."""

    values: np.ndarray
    frame_length: int = FRAME_LENGTH
    hop: int = HOP
    sample_rate: int = CANONICAL_RATE

    def __post_init__(self):
        expected = self.frame_length // 2 + 1
        if self.values.shape[0] != expected:
            raise ValueError(f"expected {expected} rows, got {self.values.shape[0]}")


@dataclass
class GraySpectrogram:
    """8-bit grayscale spectrogram image.

    Pipeline-produced images always have exactly 256 rows (enforced at PNG
    I/O and by make_spectrogram) with row 0 = highest frequency.
    """

    pixels: np.ndarray
    source: str = ""
    raw_cols: int = 0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.uint8)
        if self.pixels.ndim != 2:
            raise ValueError("pixels must be a 2D grid")

    @property
    def shape(self):
        return self.pixels.shape


def hamming_window(length: int) -> np.ndarray:
    """Symmetric Hamming window, 0.54 - 0.46*cos(2*pi*n/(length-1))."""
    if length < 2:
        raise ValueError("window length must be >= 2")
    return np.hamming(length)


def stft_power(clip: AudioClip, frame_length: int = FRAME_LENGTH, hop: int = HOP,
               kind: str = "magnitude") -> RawSpectrogram:
    """Windowed STFT magnitudes over bins 0..frame_length/2.

    Frames start at 0, hop, 2*hop, ...; a trailing partial frame is dropped
    (no zero padding), giving floor((N - frame_length)/hop) + 1 columns.
    """
    x = clip.samples
    if x.ndim != 1:
        raise ValueError("stft expects a mono clip")
    if x.shape[0] < frame_length:
        raise ValueError(
            f"clip shorter than one frame ({x.shape[0]} < {frame_length} samples)")
    frames = np.lib.stride_tricks.sliding_window_view(x, frame_length)[::hop]
    window = hamming_window(frame_length)
    spec = np.abs(np.fft.rfft(frames * window, axis=1)).T
    if kind == "power":
        spec = spec ** 2
    elif kind != "magnitude":
        raise ValueError(f"unknown spectrogram kind: {kind!r}")
    return RawSpectrogram(spec, frame_length, hop, clip.sample_rate)


def normalize_peak(raw: RawSpectrogram, target_peak: float = PEAK_NORM) -> RawSpectrogram:
    """Scale the grid so its maximum equals ``target_peak``."""
    peak = float(raw.values.max())
    if peak <= 0.0:
        raise SilentSpectrogramError("silent spectrogram")
    scaled = raw.values * (target_peak / peak)
    return RawSpectrogram(scaled, raw.frame_length, raw.hop, raw.sample_rate)


def log_compress(values: np.ndarray) -> np.ndarray:
    """Elementwise log(1 + S); monotone, zero maps to zero."""
    values = np.asarray(values)
    if values.min() < 0:
        raise ValueError("log compression expects non-negative intensities")
    return np.log1p(values)


def resize_rows(grid: np.ndarray, target_rows: int = TARGET_ROWS) -> np.ndarray:
    """Proportionally downsize so the grid has ``target_rows`` rows.

    Both axes scale by the same factor; columns become
    round(cols * target_rows / rows). Bilinear interpolation.
    """
    grid = np.asarray(grid, dtype=np.float64)
    rows, cols = grid.shape
    if rows < 2 or cols < 2:
        raise ValueError("resize needs a grid of at least 2x2")
    target_cols = round_half_up(cols * target_rows / rows)
    return cv2.resize(grid, (target_cols, target_rows), interpolation=cv2.INTER_LINEAR)


def quantize_gray(grid: np.ndarray, ceiling: float = LOG_CEILING,
                  source: str = "", raw_cols: int = 0) -> GraySpectrogram:
    """Map [0, ceiling] linearly onto [0, 255], round half away from zero, clamp.

    The ceiling is the fixed dataset-wide constant log(1 + 1e8), not the
    per-image maximum, so quantized values are comparable across clips.
    Rows are quantized in the order given.
    """
    grid = np.asarray(grid, dtype=np.float64)
    pixels = np.clip(round_half_up(grid * (255.0 / ceiling)), 0, 255).astype(np.uint8)
    return GraySpectrogram(pixels, source=source, raw_cols=raw_cols)


def make_spectrogram(clip: AudioClip, frame_length: int = FRAME_LENGTH, hop: int = HOP,
                     target_peak: float = PEAK_NORM, target_rows: int = TARGET_ROWS,
                     kind: str = "magnitude",
                     expected_rate: int = CANONICAL_RATE) -> GraySpectrogram:
    """Full chain from canonical-rate clip to stored-orientation gray image."""
    if clip.sample_rate != expected_rate:
        raise ValueError(
            f"clip rate {clip.sample_rate} != {expected_rate}; resample first")
    raw = stft_power(clip, frame_length, hop, kind)
    raw = normalize_peak(raw, target_peak)
    compressed = log_compress(raw.values)
    resized = resize_rows(compressed, target_rows)
    # storage orientation: row 0 = highest frequency
    oriented = resized[::-1, :]
    return quantize_gray(oriented, source=clip.source_path, raw_cols=raw.values.shape[1])


def save_png(image: GraySpectrogram, path) -> None:
    if image.pixels.shape[0] != TARGET_ROWS:
        raise ValueError(f"expected {TARGET_ROWS} rows, got {image.pixels.shape[0]}")
    info = PngInfo()
    info.add_text("comment", ORIENTATION_NOTE)
    Image.fromarray(image.pixels, mode="L").save(path, format="PNG", pnginfo=info)


def load_png(path) -> GraySpectrogram:
    with Image.open(path) as img:
        if img.mode != "L":
            img = img.convert("L")
        pixels = np.asarray(img, dtype=np.uint8)
    if pixels.shape[0] != TARGET_ROWS:
        raise ValueError(f"{path}: expected {TARGET_ROWS} rows, got {pixels.shape[0]}")
    return GraySpectrogram(pixels, source=str(path))
