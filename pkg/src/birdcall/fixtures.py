"""Deterministic synthetic corpora so the pipeline is testable end to end.

Each positive class is a two-tone chord in its own frequency band: the base
tone sits near a class-specific bin and the partner tone sits a
class-specific number of bins above it. The band separates classes for
simple pixel-space baselines; the tone spacing is a local pattern a small
receptive field can detect anywhere in the image, so it survives global max
pooling. Tone frequencies are placed exactly on analysis bins (multiples of
rate/frame_length) to keep spectral leakage out of assertions.

Negatives are white-noise clips, two per positive by default.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .audio_io import AudioClip, CANONICAL_RATE
from .dataset import DatasetManifest, load_manifest
from .spectrogram import FRAME_LENGTH, make_spectrogram, save_png

NYQUIST = CANONICAL_RATE / 2
BIN_HZ = CANONICAL_RATE / FRAME_LENGTH  # analysis-bin spacing, ~21.53 Hz


@dataclass(frozen=True)
class ToneSpec:
    frequency: float
    duration: float = 1.0
    amplitude: float = 0.5
    chirp_rate: float = 0.0  # Hz per second, linear sweep
    noise_seed: int | None = None
    noise_level: float = 0.0

    def __post_init__(self):
        if not 0 <= self.frequency < NYQUIST:
            raise ValueError(f"frequency {self.frequency} outside [0, {NYQUIST})")
        if self.duration <= 0:
            raise ValueError("duration must be positive")
        end = self.frequency + self.chirp_rate * self.duration
        if not 0 <= end < NYQUIST:
            raise ValueError(f"chirp sweeps to {end} Hz, outside [0, {NYQUIST})")


def synth_clip(spec: ToneSpec) -> AudioClip:
    n = int(round(spec.duration * CANONICAL_RATE))
    t = np.arange(n) / CANONICAL_RATE
    phase = 2 * np.pi * (spec.frequency * t + 0.5 * spec.chirp_rate * t * t)
    samples = spec.amplitude * np.sin(phase)
    if spec.noise_seed is not None and spec.noise_level > 0:
        rng = np.random.default_rng(spec.noise_seed)
        samples = samples + spec.noise_level * rng.standard_normal(n)
    return AudioClip(samples, CANONICAL_RATE,
                     source_path=f"synth:{spec.frequency:g}Hz")


def mix_clips(*clips: AudioClip) -> AudioClip:
    """Sum equal-length clips sample by sample."""
    if not clips:
        raise ValueError("nothing to mix")
    n = clips[0].samples.shape[0]
    if any(c.samples.shape[0] != n or c.sample_rate != clips[0].sample_rate
           for c in clips):
        raise ValueError("clips must share length and rate")
    total = np.sum([c.samples for c in clips], axis=0)
    return AudioClip(total, clips[0].sample_rate, source_path=clips[0].source_path)


def class_tone_bins(class_index: int) -> tuple:
    """(base bin, partner bin) for a class; bands and spacings both distinct."""
    base = 46 + 40 * class_index
    spacing = 24 * (class_index + 1)
    return base, base + spacing


def noise_clip(seed: int, duration: float = 1.0, amplitude: float = 0.3) -> AudioClip:
    n = int(round(duration * CANONICAL_RATE))
    rng = np.random.default_rng(seed)
    return AudioClip(amplitude * rng.standard_normal(n), CANONICAL_RATE,
                     source_path=f"synth:noise{seed}")


def synth_dataset(num_classes: int, per_class: int, seed: int, out_dir,
                  duration: float = 1.0,
                  negatives_per_positive: int = 2) -> DatasetManifest:
    """Write PNGs plus a manifest CSV; returns the loaded manifest.

    Positive clip k of class c: two bin-centered tones at the class band,
    with a per-clip whole-bin jitter (both tones move together, so the
    spacing is exact) and a random amplitude. Negatives are white noise.
    """
    if num_classes < 2:
        raise ValueError("num_classes must be >= 2")
    if per_class < 1:
        raise ValueError("per_class must be >= 1")
    out_dir = Path(out_dir)
    images = out_dir / "images"
    images.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)

    rows = []
    for c in range(num_classes):
        species = f"species_{c:02d}"
        base_bin, partner_bin = class_tone_bins(c)
        for i in range(per_class):
            jitter = int(rng.integers(-4, 5))
            amp = float(rng.uniform(0.3, 0.7))
            tones = [synth_clip(ToneSpec((base_bin + jitter) * BIN_HZ,
                                         duration=duration, amplitude=amp)),
                     synth_clip(ToneSpec((partner_bin + jitter) * BIN_HZ,
                                         duration=duration, amplitude=amp))]
            path = images / f"{species}_{i:03d}.png"
            save_png(make_spectrogram(mix_clips(*tones)), path)
            rows.append((str(path), species, "positive"))

    n_negatives = negatives_per_positive * num_classes * per_class
    for i in range(n_negatives):
        amp = float(rng.uniform(0.1, 0.5))
        clip = noise_clip(seed=int(rng.integers(0, 2**31)), duration=duration,
                          amplitude=amp)
        path = images / f"negative_{i:03d}.png"
        save_png(make_spectrogram(clip), path)
        rows.append((str(path), "negative", "negative"))

    manifest_path = out_dir / "manifest.csv"
    import csv

    with open(manifest_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["image_path", "species", "role"])
        writer.writerows(rows)
    return load_manifest(manifest_path)
