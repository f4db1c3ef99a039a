"""Birdcall classification from spectrogram images, built for small labeled corpora.

Pipeline: WAV -> mono -> 22.05 kHz -> log-magnitude spectrogram PNG ->
modified ResNet-50 (trainable gray->RGB conversion, global max pooling,
sigmoid head) -> two-stage training (large base corpus, then head swap and
fine-tune on a small target corpus) -> sliding-window inference and
cross-validated confusion-matrix evaluation.
"""

from .audio_io import AudioClip, CANONICAL_RATE, decode_audio, mix_to_mono, resample
from .config import RunConfig, resolve_config
from .dataset import (DatasetManifest, SampleRecord, SplitAssignment,
                      load_manifest, sample_negatives, split_dataset)
from .errors import (CheckpointError, ConfigMismatchError, ManifestError,
                     SilentSpectrogramError)
from .spectrogram import GraySpectrogram, load_png, make_spectrogram, save_png
from .model import (BirdcallNet, build_model, load_checkpoint, replace_head,
                    save_checkpoint)
from .inference import Prediction, classify, predict_clip
from .evaluate import ConfusionMatrix, average_folds, confusion_matrix, kfold_evaluate
from .trainer import TrainingSchedule, train

__version__ = "0.1.0"

__all__ = [
    "AudioClip", "BirdcallNet", "CANONICAL_RATE", "CheckpointError",
    "ConfigMismatchError", "ConfusionMatrix", "DatasetManifest",
    "GraySpectrogram", "ManifestError", "Prediction", "RunConfig",
    "SampleRecord", "SilentSpectrogramError", "SplitAssignment",
    "TrainingSchedule", "average_folds", "build_model", "classify",
    "confusion_matrix", "decode_audio", "kfold_evaluate", "load_checkpoint",
    "load_manifest", "load_png", "make_spectrogram", "mix_to_mono",
    "predict_clip", "replace_head", "resample", "resolve_config",
    "sample_negatives", "save_checkpoint", "save_png", "split_dataset",
    "train",
]
