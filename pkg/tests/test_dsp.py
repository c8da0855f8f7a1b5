import numpy as np
import pytest

from foleycascade.dsp import (
    DspConfig,
    MelSpectrogram,
    Waveform,
    check_cola,
    cola_sum,
    desk_dsp,
    from_model_space,
    griffin_lim,
    hann,
    hz_to_mel,
    istft,
    lowres_pool,
    mel_center_frequencies,
    mel_filterbank,
    melspec,
    noise_floor,
    paper_dsp,
    stft,
    to_model_space,
)
from foleycascade.errors import ConfigError, LengthError

DESK = desk_dsp()


def snr_db(ref: np.ndarray, est: np.ndarray) -> float:
    return 10 * np.log10(np.sum(ref**2) / np.sum((ref - est) ** 2))


def dominant_hz(x: np.ndarray, sr: int) -> float:
    spec = np.abs(np.fft.rfft(x * np.hanning(len(x))))
    return float(np.argmax(spec) * sr / len(x))


def mel_bin_width(cfg: DspConfig) -> float:
    return (hz_to_mel(cfg.fmax) - hz_to_mel(cfg.fmin)) / (cfg.mel_bins + 1)


def test_config_invariants():
    with pytest.raises(ConfigError):
        DspConfig(window_length=256, hop_length=512)
    with pytest.raises(ConfigError):
        DspConfig(fmax=3000.0)
    with pytest.raises(ConfigError):
        DspConfig(mel_bins=0)


@pytest.mark.parametrize("cfg", [DESK, paper_dsp()])
def test_cola_constant(cfg):
    s = cola_sum(cfg)
    assert np.ptp(s) < 1e-9
    assert check_cola(cfg) == pytest.approx(1.5, abs=1e-9)


def test_non_cola_config_rejected():
    cfg = DspConfig(window_length=512, hop_length=200, fft_size=512)
    with pytest.raises(ConfigError):
        istft(np.zeros((cfg.n_freqs, 4), complex), cfg)
    with pytest.raises(ConfigError):
        griffin_lim(MelSpectrogram(np.zeros((32, 4)), cfg), 2)


def test_hann_is_periodic():
    w = hann(8)
    assert w[0] == 0.0 and w[4] == pytest.approx(1.0)
    assert w[1] == pytest.approx(w[7])


def test_stft_frame_count_and_short_signal():
    x = np.zeros(2000)
    assert stft(x, DESK).shape == (DESK.n_freqs, 1 + (2000 - 512) // 128)
    with pytest.raises(LengthError):
        stft(np.zeros(100), DESK)


def test_stft_zero_signal():
    assert not np.any(stft(np.zeros(1024), DESK))


def test_stft_bin_centre_sine():
    k = 37
    n = np.arange(4096)
    x = np.sin(2 * np.pi * k * n / DESK.fft_size)
    spec = np.abs(stft(x, DESK))
    assert np.all(np.argmax(spec, axis=0) == k)


def test_parseval_energy():
    # frames tile the signal with sum_m w^2 == COLA constant wherever x is nonzero
    x = np.random.default_rng(0).standard_normal(8192)
    x[: DESK.window_length] = 0
    x[-DESK.window_length :] = 0
    spec = stft(x, DESK)
    weights = np.full(DESK.n_freqs, 2.0)
    weights[[0, -1]] = 1.0
    energy = (weights[:, None] * np.abs(spec) ** 2).sum() / (DESK.fft_size * check_cola(DESK))
    assert energy == pytest.approx(np.sum(x**2), rel=0.01)


@pytest.mark.parametrize("seed", range(4))
def test_stft_istft_round_trip(seed):
    x = np.random.default_rng(seed).standard_normal(6000)
    y = istft(stft(x, DESK), DESK)
    w = DESK.window_length
    assert snr_db(x[w : len(y) - w], y[w : len(y) - w]) > 60


def test_istft_linear_and_zero():
    rng = np.random.default_rng(1)
    spec = stft(rng.standard_normal(3000), DESK)
    assert np.allclose(istft(2.5 * spec, DESK), 2.5 * istft(spec, DESK), atol=1e-6)
    assert not np.any(istft(np.zeros_like(spec), DESK))


def test_filterbank_properties():
    fb = mel_filterbank(DESK)
    assert fb.shape == (DESK.mel_bins, DESK.n_freqs)
    assert np.all(fb >= 0) and np.all(fb.sum(axis=1) > 0)
    peaks = np.argmax(fb, axis=1)
    assert np.all(np.diff(peaks) >= 0)
    starts = np.array([np.flatnonzero(r)[0] for r in fb])
    assert np.all(np.diff(starts) >= 0)


def test_paper_filterbank_has_128_rows():
    assert mel_filterbank(paper_dsp()).shape[0] == 128


def test_filterbank_empty_support_is_config_error():
    with pytest.raises(ConfigError, match="empty support"):
        mel_filterbank(DspConfig(16000, 512, 128, 512, 128, 0.0, 8000.0))


@pytest.mark.parametrize("k", [3, 10, 20, 30])
def test_tone_at_filter_centre_peaks_in_that_filter(k):
    f = mel_center_frequencies(DESK)[k]
    t = np.arange(8192) / DESK.sample_rate
    mel = melspec(np.sin(2 * np.pi * f * t), DESK)
    assert np.bincount(np.argmax(mel.values, axis=0)).argmax() == k


def test_melspec_silence_and_frames():
    mel = melspec(np.zeros(16384), DESK)
    assert mel.values.shape == (32, 128)
    assert np.all(mel.values == np.log(DESK.log_floor))


def test_paper_scale_frame_count():
    cfg = paper_dsp()
    assert melspec(np.zeros(int(4.096 * cfg.sample_rate)), cfg).frames == 512


def test_melspec_scaling_adds_log2():
    x = np.random.default_rng(2).standard_normal(8192) * 0.1
    a, b = melspec(x, DESK).values, melspec(2 * x, DESK).values
    live = a > np.log(DESK.log_floor) + 1
    assert np.allclose(b[live] - a[live], np.log(2), atol=1e-6)


def test_griffin_lim_all_floor_is_silent():
    mel = MelSpectrogram(np.full((32, 64), np.log(DESK.log_floor)), DESK)
    out = griffin_lim(mel, 8)
    assert np.sqrt(np.mean(out.samples**2)) < 1e-4


@pytest.mark.parametrize("seed", range(8))
def test_griffin_lim_objective_non_increasing(seed):
    rng = np.random.default_rng(seed)
    values = np.log(np.maximum(rng.gamma(1.0, 0.5, size=(32, 48)), DESK.log_floor))
    _, obj = griffin_lim(MelSpectrogram(values, DESK), 32, seed=seed, return_objective=True)
    assert len(obj) == 33
    assert all(b <= a * (1 + 1e-12) for a, b in zip(obj, obj[1:]))


def test_griffin_lim_tone_frequency():
    t = np.arange(16384) / DESK.sample_rate
    mel = melspec(0.5 * np.sin(2 * np.pi * 440 * t), DESK)
    out = griffin_lim(mel, 32)
    assert len(out.samples) == 16384
    f = dominant_hz(out.samples, DESK.sample_rate)
    assert abs(hz_to_mel(f) - hz_to_mel(440)) < mel_bin_width(DESK)


def test_waveform_validation():
    with pytest.raises(ValueError, match="non-finite"):
        Waveform(np.array([0.0, np.nan]), 4000)
    with pytest.raises(LengthError):
        Waveform(np.zeros((2, 3)), 4000)


def test_noise_floor_and_pooling():
    v = np.arange(12.0).reshape(3, 4)
    assert noise_floor(v) == pytest.approx(np.median([0, 1, 2, 3]))
    pooled = lowres_pool(np.arange(16.0).reshape(4, 4), 2)
    assert np.array_equal(pooled, [[2.5, 4.5], [10.5, 12.5]])
    with pytest.raises(LengthError):
        lowres_pool(np.zeros((3, 4)), 2)


def test_model_space_round_trip():
    v = np.random.default_rng(3).uniform(-11, 4, size=(32, 128))
    assert np.allclose(from_model_space(to_model_space(v, DESK), DESK), v)
    assert to_model_space(np.log(DESK.log_floor), DESK) == pytest.approx(-1.0)
