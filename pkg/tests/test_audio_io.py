import numpy as np
import pytest
from scipy.io import wavfile

from birdcall.audio_io import (AudioClip, CANONICAL_RATE, decode_audio,
                               mix_to_mono, resample)


def write_wav(path, rate, data):
    wavfile.write(path, rate, data)
    return path


def test_decode_int16_scaling(tmp_path):
    data = np.array([0, 16384, -16384, 32767, -32768], dtype=np.int16)
    clip = decode_audio(write_wav(tmp_path / "a.wav", 8000, data))
    assert clip.sample_rate == 8000
    assert np.allclose(clip.samples, data / 32768.0)
    assert clip.samples.dtype == np.float64


def test_decode_uint8_centers_on_128(tmp_path):
    data = np.array([0, 128, 255], dtype=np.uint8)
    clip = decode_audio(write_wav(tmp_path / "a.wav", 8000, data))
    assert np.allclose(clip.samples, [(0 - 128) / 128, 0.0, (255 - 128) / 128])


def test_decode_int32_scaling(tmp_path):
    data = np.array([2**31 - 1, -(2**31), 0], dtype=np.int32)
    clip = decode_audio(write_wav(tmp_path / "a.wav", 8000, data))
    assert np.allclose(clip.samples, data / 2**31)
    assert np.abs(clip.samples).max() <= 1.0


def test_decode_float32_passthrough(tmp_path):
    data = np.array([0.25, -0.5, 0.75], dtype=np.float32)
    clip = decode_audio(write_wav(tmp_path / "a.wav", 8000, data))
    assert np.allclose(clip.samples, data)


def test_decode_missing_file():
    with pytest.raises(FileNotFoundError):
        decode_audio("/nonexistent/clip.wav")


def test_decode_keeps_channels(tmp_path):
    data = np.zeros((100, 2), dtype=np.int16)
    data[:, 0] = 1000
    clip = decode_audio(write_wav(tmp_path / "st.wav", 8000, data))
    assert clip.n_channels == 2
    assert clip.n_frames == 100


def test_clip_validation():
    with pytest.raises(ValueError):
        AudioClip(np.array([]), 8000)
    with pytest.raises(ValueError):
        AudioClip(np.array([0.0, np.nan]), 8000)
    with pytest.raises(ValueError):
        AudioClip(np.array([0.0]), 0)


def test_duration():
    clip = AudioClip(np.zeros(22050), 22050)
    assert clip.duration == pytest.approx(1.0)


def test_mix_to_mono_means_channels():
    stereo = AudioClip(np.stack([np.ones(50), np.zeros(50)], axis=1), 8000)
    mono = mix_to_mono(stereo)
    assert mono.samples.shape == (50,)
    assert np.allclose(mono.samples, 0.5)


def test_mix_to_mono_passthrough():
    clip = AudioClip(np.ones(10), 8000)
    assert mix_to_mono(clip) is clip


def test_resample_identity_is_noop():
    clip = AudioClip(np.ones(100), CANONICAL_RATE)
    assert resample(clip) is clip


def test_resample_rejects_multichannel():
    clip = AudioClip(np.zeros((100, 2)), 44100)
    with pytest.raises(ValueError):
        resample(clip)


def test_resample_halves_length():
    clip = AudioClip(np.zeros(44100), 44100)
    out = resample(clip)
    assert out.sample_rate == CANONICAL_RATE
    assert out.samples.shape == (22050,)


@pytest.mark.parametrize("src_rate", [44100, 48000, 32000])
def test_resample_preserves_tone_frequency(src_rate):
    # oracle: the DFT peak of a pure tone must stay at the same frequency
    freq = 1000.0
    n = src_rate  # one second
    t = np.arange(n) / src_rate
    clip = AudioClip(0.5 * np.sin(2 * np.pi * freq * t), src_rate)
    out = resample(clip)
    assert out.sample_rate == CANONICAL_RATE
    spectrum = np.abs(np.fft.rfft(out.samples))
    peak_hz = np.argmax(spectrum) * CANONICAL_RATE / len(out.samples)
    assert abs(peak_hz - freq) < 2.0


def test_resample_energy_is_sane():
    rng = np.random.default_rng(4)
    clip = AudioClip(0.1 * rng.standard_normal(44100), 44100)
    out = resample(clip)
    # white noise loses the upper half of its band: power roughly halves
    ratio = np.mean(out.samples**2) / np.mean(clip.samples**2)
    assert 0.3 < ratio < 0.7


def test_resample_bad_target():
    clip = AudioClip(np.zeros(100), 44100)
    with pytest.raises(ValueError):
        resample(clip, 0)
