"""Minimal WAV ingestion: PCM16, PCM24 and float32, mono or downmixed.

The RIFF parser is deliberately small and strict so its behavior is easy to
audit. Multi-channel audio is downmixed by averaging channels; off-rate audio
is resampled to 32 kHz by linear interpolation.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import InvalidInputError
from .frontend import SAMPLE_RATE, AudioClip

_FORMAT_PCM = 1
_FORMAT_FLOAT = 3


def _chunks(data: bytes):
    pos = 12
    while pos + 8 <= len(data):
        chunk_id = data[pos:pos + 4]
        (size,) = struct.unpack_from("<I", data, pos + 4)
        body = data[pos + 8:pos + 8 + size]
        if len(body) < size:
            raise InvalidInputError(f"truncated {chunk_id!r} chunk")
        yield chunk_id, body
        pos += 8 + size + (size & 1)  # chunks are word-aligned


def read_wav(path) -> tuple[np.ndarray, int]:
    """Decode a WAV file into (float32 samples shaped (n, channels), rate)."""
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise InvalidInputError(f"{path}: not a RIFF/WAVE file")
    fmt = None
    payload = None
    for chunk_id, body in _chunks(data):
        if chunk_id == b"fmt " and fmt is None:
            if len(body) < 16:
                raise InvalidInputError(f"{path}: fmt chunk too short")
            fmt = struct.unpack_from("<HHIIHH", body, 0)
        elif chunk_id == b"data" and payload is None:
            payload = body
    if fmt is None or payload is None:
        raise InvalidInputError(f"{path}: missing fmt or data chunk")
    audio_format, channels, rate, _, block_align, bits = fmt
    if channels < 1:
        raise InvalidInputError(f"{path}: invalid channel count {channels}")

    if audio_format == _FORMAT_PCM and bits == 16:
        samples = np.frombuffer(payload[:len(payload) // 2 * 2], dtype="<i2")
        samples = samples.astype(np.float32) / 32768.0
    elif audio_format == _FORMAT_PCM and bits == 24:
        usable = len(payload) // 3 * 3
        raw = np.frombuffer(payload[:usable], dtype=np.uint8).reshape(-1, 3)
        values = (
            raw[:, 0].astype(np.int32)
            | (raw[:, 1].astype(np.int32) << 8)
            | (raw[:, 2].astype(np.int32) << 16)
        )
        values = np.where(values >= 1 << 23, values - (1 << 24), values)
        samples = values.astype(np.float32) / float(1 << 23)
    elif audio_format == _FORMAT_FLOAT and bits == 32:
        samples = np.frombuffer(payload[:len(payload) // 4 * 4], dtype="<f4").copy()
    else:
        raise InvalidInputError(
            f"{path}: unsupported WAV encoding (format {audio_format}, {bits}-bit); "
            "only PCM16, PCM24 and float32 are accepted"
        )
    frames = len(samples) // channels
    if frames == 0:
        raise InvalidInputError(f"{path}: no audio frames")
    return samples[:frames * channels].reshape(frames, channels), rate


def resample_linear(samples: np.ndarray, rate: int, target_rate: int) -> np.ndarray:
    if rate == target_rate:
        return samples
    n_out = int(round(len(samples) * target_rate / rate))
    if n_out < 1:
        raise InvalidInputError("clip too short to resample")
    positions = np.arange(n_out, dtype=np.float64) * rate / target_rate
    return np.interp(positions, np.arange(len(samples)), samples).astype(np.float32)


def load_clip(path, target_rate: int = SAMPLE_RATE) -> AudioClip:
    """WAV file to a mono clip at the canonical rate."""
    samples, rate = read_wav(path)
    mono = samples.mean(axis=1, dtype=np.float64).astype(np.float32)
    return AudioClip(resample_linear(mono, rate, target_rate), target_rate)


def write_wav(path, samples: np.ndarray, rate: int = SAMPLE_RATE,
              encoding: str = "pcm16"):
    """Write mono audio; used by tools and tests."""
    samples = np.asarray(samples, dtype=np.float32).reshape(-1)
    if encoding == "pcm16":
        payload = (np.clip(samples, -1.0, 1.0) * 32767.0).astype("<i2").tobytes()
        audio_format, bits = _FORMAT_PCM, 16
    elif encoding == "float32":
        payload = samples.astype("<f4").tobytes()
        audio_format, bits = _FORMAT_FLOAT, 32
    else:
        raise InvalidInputError(f"unsupported encoding {encoding!r}")
    block_align = bits // 8
    header = struct.pack(
        "<4sI4s4sIHHIIHH4sI",
        b"RIFF", 36 + len(payload), b"WAVE",
        b"fmt ", 16, audio_format, 1, rate, rate * block_align, block_align, bits,
        b"data", len(payload),
    )
    with open(path, "wb") as fh:
        fh.write(header + payload)
