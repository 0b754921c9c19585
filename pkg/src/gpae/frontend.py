"""Log-mel spectrogram frontend.

Mono 32 kHz audio is framed with 25 ms windows at a 10 ms hop, windowed with
a periodic Hann, transformed with a 1024-point real FFT, projected onto 128
triangular mel filters (HTK mel scale, peak weight 1), log-compressed with an
additive floor, and optionally affinely normalized. Centered framing with
reflect padding gives a deterministic frame count of floor(N / hop) + 1.

Internal math runs in float64; the returned spectrogram is float32.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidConfigError, InvalidInputError, UnsupportedRateError

SAMPLE_RATE = 32000
N_MELS = 128


@dataclass(frozen=True)
class AudioClip:
    """Mono PCM buffer with amplitudes in [-1, 1]."""

    samples: np.ndarray
    sample_rate_hz: int = SAMPLE_RATE

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float32).reshape(-1)
        object.__setattr__(self, "samples", samples)
        if self.sample_rate_hz <= 0:
            raise InvalidInputError(
                f"sample rate must be positive, got {self.sample_rate_hz}"
            )

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate_hz


@dataclass(frozen=True)
class FrontendConfig:
    n_mels: int = N_MELS
    win_samples: int = 800
    hop_samples: int = 320
    fft_size: int = 1024
    mel_fmin_hz: float = 0.0
    mel_fmax_hz: float = 16000.0
    log_floor: float = 1e-5
    norm_shift: float = 0.0
    norm_scale: float = 1.0

    def __post_init__(self):
        if self.win_samples > self.fft_size:
            raise InvalidConfigError("window must not exceed the FFT size")
        if self.hop_samples > self.win_samples or self.hop_samples <= 0:
            raise InvalidConfigError("hop must be in (0, window]")
        if self.log_floor <= 0:
            raise InvalidConfigError("log floor must be positive")
        if not (0 <= self.mel_fmin_hz < self.mel_fmax_hz <= SAMPLE_RATE / 2):
            raise InvalidConfigError("mel range must satisfy 0 <= fmin < fmax <= Nyquist")
        if self.norm_scale == 0:
            raise InvalidConfigError("norm scale must be non-zero")


@dataclass(frozen=True)
class MelSpec:
    """Time x 128 matrix of normalized log-mel energies."""

    frames: np.ndarray
    frame_hop_s: float = 0.010
    win_len_s: float = 0.025

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=np.float32)
        object.__setattr__(self, "frames", frames)
        if frames.ndim != 2 or frames.shape[1] != N_MELS:
            raise InvalidInputError(f"expected (T, {N_MELS}) frames, got {frames.shape}")
        if frames.shape[0] < 1:
            raise InvalidInputError("spectrogram must contain at least one frame")
        if not np.isfinite(frames).all():
            raise InvalidInputError("spectrogram contains non-finite values")

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]


def hz_to_mel(freq_hz):
    return 2595.0 * np.log10(1.0 + np.asarray(freq_hz, dtype=np.float64) / 700.0)


def mel_to_hz(mel):
    return 700.0 * (10.0 ** (np.asarray(mel, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(cfg: FrontendConfig = FrontendConfig(),
                   sample_rate_hz: int = SAMPLE_RATE) -> np.ndarray:
    """Triangular mel filterbank of shape (n_mels, fft_size // 2 + 1).

    Peaks are 1, so each FFT bin's total weight across bands never exceeds 1.
    """
    n_bins = cfg.fft_size // 2 + 1
    bin_hz = np.arange(n_bins, dtype=np.float64) * sample_rate_hz / cfg.fft_size
    mel_pts = np.linspace(hz_to_mel(cfg.mel_fmin_hz), hz_to_mel(cfg.mel_fmax_hz),
                          cfg.n_mels + 2)
    hz_pts = mel_to_hz(mel_pts)

    fb = np.zeros((cfg.n_mels, n_bins))
    for m in range(cfg.n_mels):
        lo, center, hi = hz_pts[m], hz_pts[m + 1], hz_pts[m + 2]
        rising = (bin_hz - lo) / (center - lo)
        falling = (hi - bin_hz) / (hi - center)
        fb[m] = np.clip(np.minimum(rising, falling), 0.0, None)
    return fb


def band_center_hz(band: int, cfg: FrontendConfig = FrontendConfig()) -> float:
    """Center frequency of mel band ``band`` (0-based)."""
    mel_pts = np.linspace(hz_to_mel(cfg.mel_fmin_hz), hz_to_mel(cfg.mel_fmax_hz),
                          cfg.n_mels + 2)
    return float(mel_to_hz(mel_pts[band + 1]))


def periodic_hann(length: int) -> np.ndarray:
    n = np.arange(length, dtype=np.float64)
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * n / length)


def frame_count(n_samples: int, hop_samples: int = 320) -> int:
    """Frame count under centered framing: floor(N / hop) + 1."""
    return n_samples // hop_samples + 1


def _pad_centered(samples: np.ndarray, pad: int) -> np.ndarray:
    # Reflect padding needs at least pad+1 samples; shorter clips reflect what
    # they can and zero-fill the rest.
    n = len(samples)
    if n > pad:
        return np.pad(samples, (pad, pad), mode="reflect")
    out = np.zeros(n + 2 * pad, dtype=samples.dtype)
    out[pad:pad + n] = samples
    if n > 1:
        out[pad - (n - 1):pad] = samples[1:][::-1]
        out[pad + n:pad + n + (n - 1)] = samples[:-1][::-1]
    return out


def frame_signal(samples: np.ndarray, cfg: FrontendConfig) -> np.ndarray:
    """Split a padded signal into (T, win_samples) centered frames."""
    pad = cfg.win_samples // 2
    padded = _pad_centered(np.asarray(samples, dtype=np.float64), pad)
    n_frames = frame_count(len(samples), cfg.hop_samples)
    starts = np.arange(n_frames) * cfg.hop_samples
    idx = starts[:, None] + np.arange(cfg.win_samples)[None, :]
    return padded[idx]


def compute_melspec(clip: AudioClip, cfg: FrontendConfig = FrontendConfig()) -> MelSpec:
    """Compute the normalized 128-band log-mel spectrogram of a clip."""
    if len(clip.samples) == 0:
        raise InvalidInputError("cannot compute a spectrogram of an empty clip")
    if clip.sample_rate_hz != SAMPLE_RATE:
        raise UnsupportedRateError(
            f"expected {SAMPLE_RATE} Hz audio, got {clip.sample_rate_hz} Hz"
        )
    frames = frame_signal(clip.samples, cfg)
    windowed = frames * periodic_hann(cfg.win_samples)[None, :]
    spectrum = np.fft.rfft(windowed, n=cfg.fft_size, axis=1)
    power = spectrum.real ** 2 + spectrum.imag ** 2
    mel = power @ mel_filterbank(cfg).T
    logmel = (np.log(mel + cfg.log_floor) - cfg.norm_shift) / cfg.norm_scale
    return MelSpec(frames=logmel.astype(np.float32))
