"""Frontend checks: framing, filterbank geometry, and the naive-DFT oracle."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gpae.errors import InvalidConfigError, InvalidInputError, UnsupportedRateError
from gpae.features import low_level_features
from gpae.frontend import (
    SAMPLE_RATE,
    AudioClip,
    FrontendConfig,
    MelSpec,
    band_center_hz,
    compute_melspec,
    frame_count,
    mel_filterbank,
)

from oracles import column_means_loops, melspec_dft_oracle


class TestFraming:
    def test_ten_second_clip_shape(self, rng):
        clip = AudioClip(rng.uniform(-1, 1, 320000).astype(np.float32))
        assert compute_melspec(clip).frames.shape == (1001, 128)

    @pytest.mark.parametrize("n", [319, 320, 321, 320000])
    def test_frame_count_formula(self, n):
        assert frame_count(n) == n // 320 + 1

    @given(st.integers(min_value=1, max_value=200000))
    @settings(max_examples=30, deadline=None)
    def test_frame_count_matches_enumeration(self, n):
        # Enumeration oracle: window starts in the center-padded signal.
        starts = range(0, (n + 2 * 400) - 800 + 1, 320)
        assert frame_count(n) == len(list(starts))

    @pytest.mark.parametrize("n", [1, 2, 5, 399, 401, 4096])
    def test_actual_frames_match_formula(self, n, rng):
        clip = AudioClip(rng.uniform(-1, 1, n).astype(np.float32))
        assert compute_melspec(clip).n_frames == frame_count(n)


class TestSpectrogramValues:
    def test_silence_hits_log_floor(self):
        cfg = FrontendConfig()
        clip = AudioClip(np.zeros(32000, dtype=np.float32))
        spec = compute_melspec(clip, cfg)
        expected = np.float32((np.log(cfg.log_floor) - cfg.norm_shift) / cfg.norm_scale)
        assert np.all(spec.frames == expected)

    @pytest.mark.parametrize("band", [40, 64, 96])
    def test_sine_at_band_center_peaks_in_that_band(self, band):
        freq = band_center_hz(band)
        t = np.arange(SAMPLE_RATE) / SAMPLE_RATE
        clip = AudioClip((0.5 * np.sin(2 * np.pi * freq * t)).astype(np.float32))
        profile = compute_melspec(clip).frames.mean(axis=0)
        assert int(np.argmax(profile)) == band
        oracle_profile = melspec_dft_oracle(clip.samples).mean(axis=0)
        assert int(np.argmax(oracle_profile)) == band

    def test_matches_naive_dft_oracle(self, rng):
        for _ in range(10):
            n = int(rng.integers(64, 4097))
            samples = rng.uniform(-1, 1, n).astype(np.float32)
            got = compute_melspec(AudioClip(samples)).frames
            want = melspec_dft_oracle(samples)
            np.testing.assert_allclose(got, want, rtol=1e-6, atol=1e-6)

    def test_normalization_is_affine(self, rng):
        samples = rng.uniform(-1, 1, 4000).astype(np.float32)
        plain = compute_melspec(AudioClip(samples)).frames
        cfg = FrontendConfig(norm_shift=-1.5, norm_scale=2.0)
        shifted = compute_melspec(AudioClip(samples), cfg).frames
        np.testing.assert_allclose(shifted, (plain + 1.5) / 2.0, rtol=1e-5, atol=1e-6)


class TestFilterbank:
    def test_rows_non_negative(self):
        fb = mel_filterbank()
        assert fb.shape == (128, 513)
        assert np.all(fb >= 0)

    def test_per_bin_total_weight_bounded_by_one(self):
        fb = mel_filterbank()
        assert np.all(fb.sum(axis=0) <= 1.0 + 1e-9)


class TestErrors:
    def test_empty_clip_rejected(self):
        with pytest.raises(InvalidInputError):
            compute_melspec(AudioClip(np.zeros(0, dtype=np.float32)))

    def test_wrong_rate_rejected(self):
        clip = AudioClip(np.zeros(100, dtype=np.float32), sample_rate_hz=16000)
        with pytest.raises(UnsupportedRateError):
            compute_melspec(clip)

    def test_bad_configs_rejected(self):
        with pytest.raises(InvalidConfigError):
            FrontendConfig(win_samples=2048)  # window larger than FFT
        with pytest.raises(InvalidConfigError):
            FrontendConfig(log_floor=0.0)
        with pytest.raises(InvalidConfigError):
            FrontendConfig(mel_fmin_hz=2000.0, mel_fmax_hz=1000.0)

    def test_melspec_type_invariants(self):
        with pytest.raises(InvalidInputError):
            MelSpec(np.zeros((4, 64), dtype=np.float32))
        with pytest.raises(InvalidInputError):
            MelSpec(np.full((4, 128), np.nan, dtype=np.float32))


class TestLowLevelFeatures:
    def test_dimension_is_128(self, rng):
        spec = MelSpec(rng.normal(size=(9, 128)).astype(np.float32))
        emb = low_level_features(spec)
        assert emb.dim == 128
        assert emb.selector.parts == ("L",)

    def test_identical_rows_pass_through(self, rng):
        row = rng.normal(size=128).astype(np.float32)
        spec = MelSpec(np.tile(row, (5, 1)))
        np.testing.assert_array_equal(low_level_features(spec).values, row)

    def test_matches_explicit_column_means(self, rng):
        frames = rng.normal(size=(7, 128)).astype(np.float32)
        got = low_level_features(MelSpec(frames)).values
        want = column_means_loops(frames)
        np.testing.assert_allclose(got, want, rtol=1e-6, atol=1e-7)

    def test_invariant_under_time_permutation(self, rng):
        frames = rng.normal(size=(20, 128)).astype(np.float32)
        permuted = frames[rng.permutation(20)]
        np.testing.assert_allclose(
            low_level_features(MelSpec(frames)).values,
            low_level_features(MelSpec(permuted)).values,
            rtol=1e-6, atol=1e-6,
        )
