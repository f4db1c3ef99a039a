"""Run configuration: defaults, TOML config files, flag overrides, config hashing.

Every pipeline constant is a named key so a config file or CLI flag can
override it; the defaults below are the values the rest of the library
assumes when called without an explicit config.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass

try:
    import tomllib  # py311+
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib


@dataclass
class RunConfig:
    # audio / spectrogram
    sample_rate: int = 22050
    frame_length: int = 1024
    hop: int = 128
    peak_norm: float = 1e8
    spectrogram_kind: str = "magnitude"  # or "power"
    image_rows: int = 256

    # augmentation
    crop_size: int = 256
    pad_mode: str = "wrap"  # or "zero"
    scale_min: float = 0.9
    scale_max: float = 1.1
    noise_low: float = 0.0
    noise_high: float = 25.0

    # model
    backbone: str = "resnet50"  # or "tiny" for desk-scale runs
    dropout: float = 0.5
    device: str = "cpu"  # any torch device string, e.g. "cuda" or "cuda:1"

    # training schedule
    batch_size: int = 8
    initial_lr: float = 1e-5
    weight_decay: float = 1e-5
    plateau_patience: int = 10
    abort_patience: int = 32
    restarts: int = 3
    restart_lr_scale: float = 0.9
    min_delta: float = 0.0
    max_epochs_per_cycle: int = 300

    # stage-specific data handling
    negatives_per_epoch_base: int = 1407
    negatives_per_epoch_target: int = 175
    base_split: tuple = (0.8, 0.2)
    target_split: tuple = (0.72, 0.18, 0.10)
    folds: int = 5

    def spectrogram_meta(self) -> dict:
        """The constants a checkpoint must agree on with the data fed to it."""
        return {
            "sample_rate": self.sample_rate,
            "frame_length": self.frame_length,
            "hop": self.hop,
            "peak_norm": self.peak_norm,
            "log_base": "e",
            "spectrogram_kind": self.spectrogram_kind,
            "image_rows": self.image_rows,
        }

    def augment_meta(self) -> dict:
        return {
            "crop_size": self.crop_size,
            "pad_mode": self.pad_mode,
            "scale_range": [self.scale_min, self.scale_max],
            "noise_range": [self.noise_low, self.noise_high],
        }

    def config_hash(self) -> str:
        return hash_config(self.spectrogram_meta())

    def as_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["base_split"] = list(self.base_split)
        d["target_split"] = list(self.target_split)
        return d


_FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(RunConfig)}


def hash_config(meta: dict) -> str:
    """Stable digest of a metadata dict (canonical JSON, sorted keys)."""
    blob = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()[:16]


def load_config_file(path) -> dict:
    with open(path, "rb") as fh:
        values = tomllib.load(fh)
    unknown = set(values) - set(_FIELD_TYPES)
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    return values


def resolve_config(file_values: dict | None = None, overrides: dict | None = None) -> RunConfig:
    """Defaults, then config-file values, then explicit overrides (flags win)."""
    merged = {}
    for source in (file_values or {}), (overrides or {}):
        for key, value in source.items():
            if value is None:
                continue
            if key not in _FIELD_TYPES:
                raise ValueError(f"unknown config key: {key}")
            if key in ("base_split", "target_split"):
                value = tuple(float(v) for v in value)
            merged[key] = value
    return RunConfig(**merged)


def parse_set_overrides(pairs) -> dict:
    """Parse repeated ``--set key=value`` flags into typed config overrides."""
    out = {}
    for pair in pairs or []:
        if "=" not in pair:
            raise ValueError(f"--set expects key=value, got {pair!r}")
        key, raw = pair.split("=", 1)
        key = key.strip()
        if key not in _FIELD_TYPES:
            raise ValueError(f"unknown config key: {key}")
        default = getattr(RunConfig(), key)
        if isinstance(default, bool):
            out[key] = raw.lower() in ("1", "true", "yes")
        elif isinstance(default, int):
            out[key] = int(raw)
        elif isinstance(default, float):
            out[key] = float(raw)
        elif isinstance(default, tuple):
            out[key] = tuple(float(v) for v in raw.split(","))
        else:
            out[key] = raw
    return out
