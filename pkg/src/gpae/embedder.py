"""Scene and timestamp embedding protocols.

Scene embeddings: the clip is cut into consecutive non-overlapping 10 s
frames (the last zero-padded to full length), each frame is embedded, and the
per-frame embeddings are averaged.

Timestamp embeddings: overlapping 160 ms windows at a 50 ms hop; each window
is embedded independently and stamped with its center time. Clips shorter
than one window are zero-padded to 160 ms.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError
from .features import Embedding, FeatureSelector, extract
from .frontend import SAMPLE_RATE, AudioClip
from .network import Model

SCENE_FRAME_SAMPLES = 10 * SAMPLE_RATE
WINDOW_SAMPLES = 5120  # 160 ms
HOP_SAMPLES = 1600  # 50 ms
WINDOW_CENTER_S = WINDOW_SAMPLES / SAMPLE_RATE / 2


@dataclass(frozen=True)
class SceneEmbedding:
    embedding: Embedding
    n_frames_averaged: int


@dataclass(frozen=True)
class TimestampEmbeddings:
    timestamps_s: np.ndarray  # float64 window centers, 50 ms apart
    embeddings: list[Embedding]


def scene_frame_bounds(n_samples: int) -> list[tuple[int, int]]:
    """(start, end) sample ranges of the 10 s scene frames; ceil(N/10s) of them."""
    if n_samples < 1:
        raise InvalidInputError("cannot split an empty clip into scene frames")
    n_frames = -(-n_samples // SCENE_FRAME_SAMPLES)
    return [
        (k * SCENE_FRAME_SAMPLES, min((k + 1) * SCENE_FRAME_SAMPLES, n_samples))
        for k in range(n_frames)
    ]


def _embed_segment(segment: np.ndarray, pad_to: int, model: Model,
                   selector: FeatureSelector) -> Embedding:
    if len(segment) < pad_to:
        segment = np.pad(segment, (0, pad_to - len(segment)))
    clip = AudioClip(segment, SAMPLE_RATE)
    mel = model.melspec(clip)
    return extract(model.trace(mel), mel, selector)


def scene_embedding(clip: AudioClip, model: Model,
                    selector: FeatureSelector) -> SceneEmbedding:
    """Mean of per-10 s-frame embeddings for a whole clip."""
    if len(clip.samples) == 0:
        raise InvalidInputError("cannot embed an empty clip")
    bounds = scene_frame_bounds(len(clip.samples))
    vectors = [
        _embed_segment(clip.samples[start:end], SCENE_FRAME_SAMPLES, model, selector).values
        for start, end in bounds
    ]
    mean = np.mean(np.stack(vectors), axis=0, dtype=np.float64).astype(np.float32)
    return SceneEmbedding(Embedding(mean, selector), n_frames_averaged=len(bounds))


def timestamp_window_count(n_samples: int) -> int:
    n = max(n_samples, WINDOW_SAMPLES)
    return (n - WINDOW_SAMPLES) // HOP_SAMPLES + 1


def timestamp_embeddings(clip: AudioClip, model: Model,
                         selector: FeatureSelector) -> TimestampEmbeddings:
    """One embedding per 160 ms window, stamped with the window center."""
    if len(clip.samples) == 0:
        raise InvalidInputError("cannot embed an empty clip")
    samples = clip.samples
    if len(samples) < WINDOW_SAMPLES:
        samples = np.pad(samples, (0, WINDOW_SAMPLES - len(samples)))
    n_windows = timestamp_window_count(len(samples))
    embeddings = [
        _embed_segment(
            samples[k * HOP_SAMPLES:k * HOP_SAMPLES + WINDOW_SAMPLES],
            WINDOW_SAMPLES,
            model,
            selector,
        )
        for k in range(n_windows)
    ]
    timestamps = np.arange(n_windows) * (HOP_SAMPLES / SAMPLE_RATE) + WINDOW_CENTER_S
    return TimestampEmbeddings(timestamps_s=timestamps, embeddings=embeddings)
