"""Audio decoding, mono mixdown, and resampling to the pipeline's canonical rate.

WAV (PCM 8/16/24-bit and IEEE float) is the mandatory input format. All
recordings are brought to 22.05 kHz mono before spectrogram conversion so
clips of mixed provenance are comparable.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy.io import wavfile
from scipy.signal import resample_poly

CANONICAL_RATE = 22050


@dataclass
class AudioClip:
    """Decoded waveform. ``samples`` is float64 in [-1, 1], shape (n,) for mono
    or (n, channels) before mixdown."""

    samples: np.ndarray
    sample_rate: int
    source_path: str = ""

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        if self.samples.size == 0:
            raise ValueError("zero-length stream")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("non-finite amplitude values")

    @property
    def n_frames(self) -> int:
        return self.samples.shape[0]

    @property
    def n_channels(self) -> int:
        return 1 if self.samples.ndim == 1 else self.samples.shape[1]

    @property
    def duration(self) -> float:
        return self.n_frames / self.sample_rate


def _pcm_to_float(data: np.ndarray) -> np.ndarray:
    """Scale integer PCM by the signed maximum of its bit depth.

    scipy loads 24-bit PCM left-justified into int32, so dividing by 2**31
    is correct for both true 32-bit and 24-bit payloads.
    """
    if data.dtype == np.uint8:
        return (data.astype(np.float64) - 128.0) / 128.0
    if data.dtype == np.int16:
        return data.astype(np.float64) / 32768.0
    if data.dtype == np.int32:
        return data.astype(np.float64) / 2147483648.0
    if data.dtype in (np.float32, np.float64):
        return data.astype(np.float64)
    raise ValueError(f"unsupported WAV sample format: {data.dtype}")


def decode_audio(path) -> AudioClip:
    """Decode a WAV file at its native rate, channels preserved.

    Raises FileNotFoundError for a missing file, ValueError for unsupported
    codecs or an empty data chunk.
    """
    rate, data = wavfile.read(path)
    if data.shape[0] == 0:
        raise ValueError("zero-length stream")
    return AudioClip(_pcm_to_float(data), int(rate), source_path=str(path))


def mix_to_mono(clip: AudioClip) -> AudioClip:
    """Average channels per frame. Mono input comes back unchanged."""
    if clip.samples.ndim == 1:
        return clip
    mono = clip.samples.mean(axis=1)
    return AudioClip(mono, clip.sample_rate, clip.source_path)


def resample(clip: AudioClip, target_rate: int = CANONICAL_RATE) -> AudioClip:
    """Band-limited polyphase resampling of a mono clip.

    The up/down factors come from the exact rate ratio, so common conversions
    (44.1k -> 22.05k) are a clean 1:2 decimation. A clip already at the target
    rate is returned as-is.
    """
    if clip.samples.ndim != 1:
        raise ValueError("resample expects a mono clip; call mix_to_mono first")
    if target_rate <= 0:
        raise ValueError("target_rate must be positive")
    if clip.sample_rate == target_rate:
        return clip
    ratio = Fraction(int(target_rate), int(clip.sample_rate))
    out = resample_poly(clip.samples, ratio.numerator, ratio.denominator)
    return AudioClip(out, target_rate, clip.source_path)
