"""Whole-recording classification by sliding half-overlapping windows.

A full-length spectrogram is cut into 256x256 views at column origins
0, 128, 256, ...; if the last regular window would leave a tail uncovered,
one extra window sits flush with the right edge. Each window is min-max
normalized (exactly the validation pipeline, with the window as the crop),
scored by the network, and the clip score for every class is the maximum
over windows. The negative class competes in the final argmax, so a clip
that looks like background sound is labeled negative rather than forced
onto a species.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .augment import FloatImage, RAW_GRAY, minmax_normalize, pad_axis
from .dataset import NEGATIVE_CLASS
from .model import BirdcallNet, forward

WINDOW = 256
WINDOW_HOP = 128


@dataclass(frozen=True)
class Prediction:
    scores: np.ndarray            # (K+1,) per-class clip scores
    per_window_scores: np.ndarray  # (W, K+1)
    window_origins: tuple
    class_names: tuple

    @property
    def windows(self) -> int:
        return len(self.window_origins)

    def score_map(self) -> dict:
        return {name: float(s) for name, s in zip(self.class_names, self.scores)}


def window_origins(cols: int, size: int = WINDOW, hop: int = WINDOW_HOP) -> list:
    """Column offsets of the sliding windows; strictly increasing.

    Narrow images (cols <= size) get a single origin-0 window. Otherwise the
    regular grid 0, hop, 2*hop, ... is extended with a flush-right window at
    cols - size unless that origin is already on the grid.
    """
    if cols <= size:
        return [0]
    origins = list(range(0, cols - size + 1, hop))
    if origins[-1] != cols - size:
        origins.append(cols - size)
    return origins


def window_image(pixels: np.ndarray, size: int = WINDOW, hop: int = WINDOW_HOP,
                 pad_mode: str = "wrap") -> tuple:
    """Cut a (256, cols) image into size x size views; returns (views, origins)."""
    pixels = np.asarray(pixels)
    if pixels.ndim != 2 or pixels.shape[0] != size:
        raise ValueError(f"expected a {size}-row image, got shape {pixels.shape}")
    padded = pad_axis(pixels.astype(np.float64), 1, size, pad_mode)
    origins = window_origins(pixels.shape[1], size, hop)
    views = [padded[:, o:o + size] for o in origins]
    return views, origins


def predict_clip(net: BirdcallNet, image, class_names=None, batch_size: int = 8,
                 pad_mode: str = "wrap") -> Prediction:
    """Sliding-window scores for one spectrogram; deterministic in eval mode."""
    pixels = image.pixels if hasattr(image, "pixels") else np.asarray(image)
    if class_names is None:
        class_names = net.class_names
    if class_names is None or len(class_names) != net.num_classes:
        raise ValueError(f"need {net.num_classes} class names to label predictions")
    views, origins = window_image(pixels, pad_mode=pad_mode)
    normalized = [minmax_normalize(FloatImage(v, RAW_GRAY)).pixels for v in views]
    chunks = []
    for start in range(0, len(normalized), batch_size):
        batch = np.stack(normalized[start:start + batch_size])
        chunks.append(forward(net, batch, mode="eval"))
    per_window = np.concatenate(chunks, axis=0)
    return Prediction(scores=per_window.max(axis=0),
                      per_window_scores=per_window,
                      window_origins=tuple(origins),
                      class_names=tuple(class_names))


def classify(pred: Prediction, threshold: float | None = None):
    """Label index in single-label mode, or a sorted index list with a threshold.

    Single-label: argmax over all classes, ties to the lowest index.
    Multi-label: every positive class scoring >= threshold; the negative
    index alone if none pass.
    """
    if threshold is None:
        return int(np.argmax(pred.scores))
    if not 0 < threshold < 1:
        raise ValueError(f"threshold must be in (0, 1), got {threshold}")
    names = list(pred.class_names)
    picked = [i for i, name in enumerate(names)
              if name != NEGATIVE_CLASS and pred.scores[i] >= threshold]
    if not picked:
        return [names.index(NEGATIVE_CLASS)] if NEGATIVE_CLASS in names else []
    return picked
