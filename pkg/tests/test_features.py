import wave

import numpy as np
import pytest

from fieldasr.errors import FormatError, RangeError, SizeError
from fieldasr.features import (
    CmvnStats,
    FeatureConfig,
    FeatureMatrix,
    cmvn_apply,
    cmvn_fit,
    decode_wav,
    frame_count,
    hann_window,
    logmel,
    mel_center_freqs,
    mel_filterbank,
    read_feature_cache,
    write_feature_cache,
)

CFG = FeatureConfig()


def write_wav(path, samples, rate=16000, channels=1):
    data = np.clip(np.asarray(samples), -1.0, 1.0)
    ints = np.round(data * 32768.0).astype("<i2")
    if channels == 2:
        ints = ints.reshape(-1, 2)
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(channels)
        fh.setsampwidth(2)
        fh.setframerate(rate)
        fh.writeframes(ints.tobytes())


class TestDecodeWav:
    def test_silence(self, tmp_path):
        path = tmp_path / "s.wav"
        write_wav(path, np.zeros(16000))
        samples = decode_wav(path)
        assert samples.shape == (16000,)
        assert np.all(samples == 0.0)

    def test_int16_scaling(self, tmp_path):
        path = tmp_path / "one.wav"
        with wave.open(str(path), "wb") as fh:
            fh.setnchannels(1)
            fh.setsampwidth(2)
            fh.setframerate(16000)
            fh.writeframes(np.array([32767, -32768], dtype="<i2").tobytes())
        samples = decode_wav(path)
        assert abs(samples[0] - 32767 / 32768) < 1e-12
        assert samples[1] == -1.0

    def test_stereo_opposite_channels_cancel(self, tmp_path):
        path = tmp_path / "st.wav"
        x = np.sin(np.linspace(0, 10, 1600)) * 0.5
        interleaved = np.empty(3200)
        interleaved[0::2] = x
        interleaved[1::2] = -x
        with wave.open(str(path), "wb") as fh:
            fh.setnchannels(2)
            fh.setsampwidth(2)
            fh.setframerate(16000)
            ints = np.round(interleaved * 32768.0).astype("<i2")
            fh.writeframes(ints.tobytes())
        samples = decode_wav(path)
        assert np.all(samples == 0.0)

    def test_slice_selects_span(self, tmp_path):
        path = tmp_path / "sl.wav"
        ramp = np.arange(16000) / 32768.0
        write_wav(path, ramp)
        samples = decode_wav(path, 100, 200)
        assert samples.shape == (1600,)
        np.testing.assert_allclose(samples, ramp[1600:3200], atol=1e-4)

    def test_wrong_rate_names_field(self, tmp_path):
        path = tmp_path / "r8.wav"
        write_wav(path, np.zeros(8000), rate=8000)
        with pytest.raises(FormatError, match="sample rate 8000"):
            decode_wav(path)

    def test_slice_outside_file(self, tmp_path):
        path = tmp_path / "s.wav"
        write_wav(path, np.zeros(1600))
        with pytest.raises(RangeError):
            decode_wav(path, 0, 500)

    def test_wrong_width(self, tmp_path):
        path = tmp_path / "w1.wav"
        with wave.open(str(path), "wb") as fh:
            fh.setnchannels(1)
            fh.setsampwidth(1)
            fh.setframerate(16000)
            fh.writeframes(b"\x00" * 100)
        with pytest.raises(FormatError, match="8 bits"):
            decode_wav(path)


class TestLogmel:
    def test_frame_count_one_second(self):
        fm = logmel(np.random.default_rng(0).normal(size=16000) * 0.1, CFG)
        assert fm.n_frames == 1 + (16000 - 400) // 160 == 98

    def test_frame_count_formula_holds(self):
        rng = np.random.default_rng(1)
        for n in [400, 401, 559, 560, 561, 4000, 16000]:
            fm = logmel(rng.normal(size=n) * 0.1, CFG)
            assert fm.n_frames == frame_count(n, CFG)

    def test_all_zero_input_hits_floor(self):
        fm = logmel(np.zeros(1600), CFG)
        np.testing.assert_allclose(fm.frames, np.log(1e-10))
        assert abs(fm.frames[0, 0] - (-23.0259)) < 1e-3

    def test_too_short_reports_minimum(self):
        with pytest.raises(SizeError, match="400"):
            logmel(np.zeros(399), CFG)

    def test_deterministic(self):
        x = np.random.default_rng(2).normal(size=3200)
        a = logmel(x, CFG).frames
        b = logmel(x, CFG).frames
        assert np.array_equal(a, b)

    def test_finite_for_any_finite_input(self):
        rng = np.random.default_rng(3)
        for scale in [0.0, 1e-8, 1.0, 1e4]:
            fm = logmel(rng.normal(size=1000) * scale, CFG)
            assert np.all(np.isfinite(fm.frames))

    def test_sine_at_band_center_peaks_there(self):
        # independent oracle: direct-summation DFT, no FFT shared code
        centers = mel_center_freqs(CFG)
        rng = np.random.default_rng(4)
        for band in [5, 12, 20, 30]:
            freq = centers[band]
            t = np.arange(1600) / CFG.sample_rate
            x = 0.5 * np.sin(2 * np.pi * freq * t)
            fm = logmel(x, CFG)
            mean_energy = fm.frames.mean(axis=0)
            assert mean_energy.argmax() == band

            # oracle on the first frame
            frame = x[: CFG.window_samples] * hann_window(CFG.window_samples)
            power = naive_power_spectrum(frame, CFG.n_fft)
            oracle_mel = np.log(
                np.maximum(mel_filterbank(CFG) @ power, CFG.log_floor)
            )
            np.testing.assert_allclose(fm.frames[0], oracle_mel, atol=1e-8)
            assert oracle_mel.argmax() == band


def naive_power_spectrum(frame, n_fft):
    """O(N^2) direct-summation DFT of a zero-padded frame."""
    padded = np.zeros(n_fft)
    padded[: frame.size] = frame
    n_bins = n_fft // 2 + 1
    power = np.zeros(n_bins)
    for k in range(n_bins):
        angle = -2.0 * np.pi * k * np.arange(n_fft) / n_fft
        re = float(np.sum(padded * np.cos(angle)))
        im = float(np.sum(padded * np.sin(angle)))
        power[k] = re * re + im * im
    return power


class TestCmvn:
    def make_features(self, rng, n=4):
        return [
            FeatureMatrix(f"u{i}", rng.normal(loc=3.0, scale=2.0, size=(20, 5)))
            for i in range(n)
        ]

    def test_normalizes_training_set(self):
        rng = np.random.default_rng(5)
        feats = self.make_features(rng)
        stats = cmvn_fit(feats)
        normalized = np.concatenate(
            [cmvn_apply(f, stats).frames for f in feats], axis=0
        )
        assert np.abs(normalized.mean(axis=0)).max() < 1e-9
        np.testing.assert_allclose(normalized.std(axis=0), 1.0, atol=1e-6)

    def test_constant_bin_clamped(self):
        fm = FeatureMatrix("u", np.full((10, 3), 7.0))
        stats = cmvn_fit([fm])
        assert np.all(stats.stddev == 1e-8)
        out = cmvn_apply(fm, stats)
        assert np.all(np.isfinite(out.frames))

    def test_matches_two_pass_reference(self):
        rng = np.random.default_rng(6)
        feats = self.make_features(rng, n=3)
        stats = cmvn_fit(feats)
        # two-pass reference: explicit accumulation
        total = sum(f.frames.shape[0] for f in feats)
        acc = np.zeros(5)
        for f in feats:
            acc += f.frames.sum(axis=0)
        mean = acc / total
        sq = np.zeros(5)
        for f in feats:
            sq += ((f.frames - mean) ** 2).sum(axis=0)
        std = np.maximum(np.sqrt(sq / total), 1e-8)
        np.testing.assert_allclose(stats.mean, mean, rtol=1e-12)
        np.testing.assert_allclose(stats.stddev, std, rtol=1e-10)

    def test_empty_fit_raises(self):
        with pytest.raises(SizeError):
            cmvn_fit([])


def test_feature_cache_roundtrip(tmp_path):
    rng = np.random.default_rng(8)
    feats = [
        FeatureMatrix(f"spk-rec-{i:08d}", rng.normal(size=(i + 2, 4)))
        for i in range(5)
    ]
    path = tmp_path / "feats.bin"
    write_feature_cache(path, feats)
    back = read_feature_cache(path)
    assert list(back) == [f.utterance_id for f in feats]
    for f in feats:
        np.testing.assert_allclose(
            back[f.utterance_id].frames, f.frames, atol=1e-6
        )


def test_feature_cache_truncation_detected(tmp_path):
    from fieldasr.errors import IntegrityError

    rng = np.random.default_rng(9)
    feats = [FeatureMatrix("u1", rng.normal(size=(6, 4)))]
    path = tmp_path / "feats.bin"
    write_feature_cache(path, feats)
    data = path.read_bytes()
    path.write_bytes(data[:-5])
    with pytest.raises(IntegrityError, match="truncated"):
        read_feature_cache(path)
