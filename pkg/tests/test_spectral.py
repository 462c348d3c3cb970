import io

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from timbregen.spectral import (
    AudioClip,
    DegeneratePhaseError,
    InvalidAudioError,
    ShapeMismatchError,
    SpectralImage,
    StftConfig,
    fit_to_grid,
    istft_plus,
    load_spectral,
    read_wav,
    save_spectral,
    silence_values,
    spectral_to_image,
    stft_plus,
    unfit_from_grid,
    write_wav,
)

CFG = StftConfig()  # 1024/256 hann, 16 kHz, 4 s
SMALL = StftConfig(window_size=64, hop_size=16, sample_rate=1000, duration=0.256)


def direct_dft(frame: np.ndarray) -> np.ndarray:
    """O(N^2) DFT oracle, positive-frequency half."""
    n = len(frame)
    k = np.arange(n // 2 + 1)[:, None]
    t = np.arange(n)[None, :]
    return (frame[None, :] * np.exp(-2j * np.pi * k * t / n)).sum(axis=1)


def make_clip(cfg, fn):
    t = np.arange(cfg.num_samples) / cfg.sample_rate
    return AudioClip(samples=fn(t), sample_rate=cfg.sample_rate)


def zero_clip(cfg):
    return AudioClip(np.zeros(cfg.num_samples), cfg.sample_rate)


class TestStftPlus:
    def test_zero_clip_floor_and_phase(self):
        x = stft_plus(zero_clip(CFG), CFG)
        assert x.data.shape == (3, CFG.freq_bins, CFG.num_frames)
        assert np.allclose(x.data[0], np.log(CFG.eps_floor))
        assert np.allclose(x.data[1], 0.0)
        assert np.allclose(x.data[2], 1.0)

    def test_bin_centered_sine_dominant_row(self):
        # 8 cycles per window -> exactly bin 8 of the small config
        freq = 8 * SMALL.sample_rate / SMALL.window_size
        clip = make_clip(SMALL, lambda t: np.sin(2 * np.pi * freq * t))
        x = stft_plus(clip, SMALL)
        mags = np.exp(x.data[0])
        mid = x.frames // 2
        col = mags[:, mid]
        assert int(np.argmax(col)) == 8
        # periodic Hann leaks into the two adjacent bins only
        far = np.delete(col, [7, 8, 9])
        assert far.max() < 1e-8 * col[8] + SMALL.eps_floor * 1.01

    def test_matches_direct_dft_oracle(self):
        rng = np.random.default_rng(3)
        clip = AudioClip(
            rng.uniform(-1, 1, SMALL.num_samples), SMALL.sample_rate
        )
        x = stft_plus(clip, SMALL)
        # rebuild one interior windowed frame by hand and compare
        m = 5
        left = SMALL.window_size // 2
        start = m * SMALL.hop_size - left
        frame = np.zeros(SMALL.window_size)
        lo, hi = max(0, start), min(len(clip.samples), start + SMALL.window_size)
        frame[lo - start : hi - start] = clip.samples[lo:hi]
        ref = direct_dft(frame * SMALL.window())
        got = np.exp(x.data[0][:, m]) * (x.data[2][:, m] + 1j * x.data[1][:, m])
        big = np.abs(ref) > 10 * SMALL.eps_floor
        assert np.allclose(got[big], ref[big], rtol=1e-9, atol=1e-12)

    def test_phase_consistency(self):
        rng = np.random.default_rng(11)
        clip = AudioClip(rng.uniform(-1, 1, CFG.num_samples), CFG.sample_rate)
        x = stft_plus(clip, CFG)
        sq = x.data[1] ** 2 + x.data[2] ** 2
        assert np.max(np.abs(sq - 1.0)) <= 1e-6

    def test_magnitude_linear_in_amplitude(self):
        clip = make_clip(SMALL, lambda t: 0.5 * np.sin(2 * np.pi * 125 * t))
        a = 1.7
        scaled = AudioClip(clip.samples * a, clip.sample_rate)
        x1 = stft_plus(clip, SMALL)
        x2 = stft_plus(scaled, SMALL)
        above = x1.data[0] > np.log(SMALL.eps_floor / a) + 1e-9
        # only compare bins comfortably above the floor in both images
        strong = x1.data[0] > np.log(SMALL.eps_floor) + 1.0
        mask = above & strong
        assert mask.any()
        assert np.allclose(x2.data[0][mask] - x1.data[0][mask], np.log(a), atol=1e-9)

    def test_parseval_against_direct_dft(self):
        rng = np.random.default_rng(4)
        cfg = StftConfig(window_size=64, hop_size=16, sample_rate=1000, duration=0.064)
        clip = AudioClip(rng.uniform(-1, 1, cfg.num_samples), cfg.sample_rate)
        x = stft_plus(clip, cfg)
        m = 2
        left = cfg.window_size // 2
        start = m * cfg.hop_size - left
        frame = np.zeros(cfg.window_size)
        lo, hi = max(0, start), min(len(clip.samples), start + cfg.window_size)
        frame[lo - start : hi - start] = clip.samples[lo:hi]
        wframe = frame * cfg.window()
        spec = direct_dft(wframe)
        n = cfg.window_size
        full_energy = (
            np.abs(spec[0]) ** 2
            + 2 * np.sum(np.abs(spec[1:-1]) ** 2)
            + np.abs(spec[-1]) ** 2
        )
        assert np.isclose(full_energy, n * np.sum(wframe**2), rtol=1e-6)
        got = np.exp(x.data[0][:, m])
        ref = np.abs(spec)
        big = ref > 10 * cfg.eps_floor
        assert np.allclose(got[big], ref[big], rtol=1e-9)

    def test_rejects_nonfinite(self):
        s = np.zeros(CFG.num_samples)
        s[10] = np.nan
        with pytest.raises(InvalidAudioError):
            stft_plus(AudioClip(s, CFG.sample_rate), CFG)

    def test_rejects_wrong_length(self):
        with pytest.raises(ShapeMismatchError):
            stft_plus(AudioClip(np.zeros(100), CFG.sample_rate), CFG)

    def test_rejects_wrong_rate(self):
        with pytest.raises(ShapeMismatchError):
            stft_plus(AudioClip(np.zeros(CFG.num_samples), 8000), CFG)


class TestIstftPlus:
    def test_zero_clip_residual(self):
        x = stft_plus(zero_clip(CFG), CFG)
        back = istft_plus(x, CFG)
        assert np.max(np.abs(back.samples)) <= 1e-6

    def test_white_noise_round_trip_seed7(self):
        rng = np.random.default_rng(7)
        s = rng.uniform(-1, 1, CFG.num_samples)
        s /= np.max(np.abs(s))
        back = istft_plus(stft_plus(AudioClip(s, CFG.sample_rate), CFG), CFG)
        assert np.max(np.abs(back.samples - s)) <= 1e-4

    def test_renormalization_invariance(self):
        rng = np.random.default_rng(9)
        s = rng.uniform(-1, 1, SMALL.num_samples)
        s /= np.max(np.abs(s))
        x = stft_plus(AudioClip(s, SMALL.sample_rate), SMALL)
        shrunk = SpectralImage(
            np.stack([x.data[0], 0.9 * x.data[1], 0.9 * x.data[2]]),
            stft_config=SMALL,
        )
        a = istft_plus(x, SMALL)
        b = istft_plus(shrunk, SMALL)
        assert np.allclose(a.samples, b.samples, atol=1e-12, rtol=0)

    def test_degenerate_phase_rejected(self):
        x = stft_plus(zero_clip(SMALL), SMALL)
        bad = x.data.copy()
        bad[1] *= 0.3
        bad[2] *= 0.3
        with pytest.raises(DegeneratePhaseError):
            istft_plus(SpectralImage(bad, stft_config=SMALL), SMALL)

    def test_wrong_bins_rejected(self):
        with pytest.raises(ShapeMismatchError):
            istft_plus(SpectralImage(np.zeros((3, 8, 4))), SMALL)

    @settings(max_examples=15, deadline=None)
    @given(seed=st.integers(0, 2**31 - 1))
    def test_round_trip_property(self, seed):
        rng = np.random.default_rng(seed)
        s = rng.uniform(-1, 1, SMALL.num_samples)
        peak = np.max(np.abs(s))
        if peak > 0:
            s = s / peak
        back = istft_plus(stft_plus(AudioClip(s, SMALL.sample_rate), SMALL), SMALL)
        assert np.max(np.abs(back.samples - s)) <= 1e-4


class TestRaster:
    def test_constant_channel_mid_gray(self):
        x = stft_plus(zero_clip(SMALL), SMALL)
        raster = spectral_to_image(x)
        assert raster.dtype == np.uint8
        assert np.all(raster == 128)

    def test_sine_bright_band(self):
        freq = 8 * SMALL.sample_rate / SMALL.window_size
        clip = make_clip(SMALL, lambda t: np.sin(2 * np.pi * freq * t))
        raster = spectral_to_image(stft_plus(clip, SMALL))
        row_mean = raster.astype(float).mean(axis=1)
        # frequency axis is flipped bottom-to-top
        assert int(np.argmax(row_mean)) == SMALL.freq_bins - 1 - 8

    def test_shape_preserved(self):
        x = stft_plus(zero_clip(SMALL), SMALL)
        assert spectral_to_image(x).shape == (SMALL.freq_bins, SMALL.num_frames)


class TestGridFit:
    def test_round_trip(self):
        rng = np.random.default_rng(2)
        s = rng.uniform(-1, 1, SMALL.num_samples)
        s /= np.max(np.abs(s))
        x = stft_plus(AudioClip(s, SMALL.sample_rate), SMALL)
        fitted = fit_to_grid(x, 8)
        assert fitted.data.shape[1] % 8 == 0
        assert fitted.data.shape[2] % 8 == 0
        restored = unfit_from_grid(fitted, x.freq_bins, x.frames)
        # cropped top rows come back as silence; everything else is intact
        kept = fitted.data.shape[1]
        assert np.array_equal(restored.data[:, :kept, :], x.data[:, :kept, :])
        lm, sn, cs = silence_values(SMALL)
        assert np.allclose(restored.data[0, kept:, :], lm)
        assert np.allclose(restored.data[1, kept:, :], sn)
        assert np.allclose(restored.data[2, kept:, :], cs)

    def test_default_dims(self):
        x = stft_plus(zero_clip(CFG), CFG)
        assert (x.freq_bins, x.frames) == (513, 251)
        fitted = fit_to_grid(x, 8)
        assert fitted.data.shape == (3, 512, 256)

    def test_round_trip_audio_close_after_fit(self):
        # band-limited content loses almost nothing to the dropped Nyquist row
        t = np.arange(CFG.num_samples) / CFG.sample_rate
        s = 0.6 * np.sin(2 * np.pi * 440 * t) + 0.4 * np.sin(2 * np.pi * 1870 * t)
        s /= np.max(np.abs(s))
        x = stft_plus(AudioClip(s, CFG.sample_rate), CFG)
        restored = unfit_from_grid(fit_to_grid(x, 8), x.freq_bins, x.frames)
        back = istft_plus(restored, CFG)
        assert np.max(np.abs(back.samples - s)) <= 1e-3
        # white noise is the worst case: the full Nyquist row is lost
        rng = np.random.default_rng(6)
        w = rng.uniform(-1, 1, CFG.num_samples)
        w /= np.max(np.abs(w))
        xw = stft_plus(AudioClip(w, CFG.sample_rate), CFG)
        restored_w = unfit_from_grid(fit_to_grid(xw, 8), xw.freq_bins, xw.frames)
        back_w = istft_plus(restored_w, CFG)
        assert np.max(np.abs(back_w.samples - w)) <= 0.1


class TestIo:
    def test_wav_round_trip(self, tmp_path):
        rng = np.random.default_rng(5)
        s = rng.uniform(-1, 1, 2000)
        clip = AudioClip(s, 16000)
        p = tmp_path / "x.wav"
        write_wav(p, clip)
        back = read_wav(p)
        assert back.sample_rate == 16000
        assert np.max(np.abs(back.samples - s)) <= 1.0 / 32767

    def test_wav_rejects_stereo(self, tmp_path):
        import wave as wave_mod

        p = tmp_path / "stereo.wav"
        with wave_mod.open(str(p), "wb") as f:
            f.setnchannels(2)
            f.setsampwidth(2)
            f.setframerate(16000)
            f.writeframes(b"\0" * 400)
        with pytest.raises(InvalidAudioError):
            read_wav(p)

    def test_spectral_container_round_trip(self):
        x = stft_plus(zero_clip(SMALL), SMALL)
        buf = io.BytesIO()
        save_spectral(buf, x)
        buf.seek(0)
        loaded, cfg = load_spectral(buf)
        assert cfg == SMALL
        assert np.allclose(loaded.data, x.data, atol=1e-6)

    def test_container_rejects_garbage(self):
        with pytest.raises(ValueError):
            load_spectral(io.BytesIO(b"nope"))


class TestConfigValidation:
    def test_cola_violation_rejected(self):
        with pytest.raises(ValueError, match="COLA"):
            StftConfig(window_size=64, hop_size=48)

    def test_bad_eps_rejected(self):
        with pytest.raises(ValueError):
            StftConfig(eps_floor=0.0)

    def test_hop_bounds(self):
        with pytest.raises(ValueError):
            StftConfig(window_size=64, hop_size=65)
