import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ebidlma.errors import ConfigError
from ebidlma.spectral import StftConfig, istft, magnitude, power, read_wav, stft, write_wav

SMALL = StftConfig(64, 32, "hamming")


def test_default_config_matches_512ms_at_8khz():
    cfg = StftConfig()
    assert cfg == StftConfig.from_ms(512, 256, 8000)
    assert cfg.n_bins == 2049


def test_zero_waveform_gives_zero_spectrogram():
    assert np.all(stft(np.zeros(500), SMALL) == 0)


def test_bin_centred_sinusoid_concentrates_in_main_lobe():
    L, k = SMALL.window_length, 5
    n = np.arange(2000)
    spec = stft(np.cos(2 * np.pi * k * n / L), SMALL)
    # Window-modulated sinusoid, DFT evaluated directly without the FFT path.
    w = SMALL.window()
    m = np.arange(L)
    direct = np.array([np.sum(w * np.cos(2 * np.pi * k * m / L) * np.exp(-2j * np.pi * b * m / L))
                       for b in range(SMALL.n_bins)])
    expected_share = np.abs(direct[k]) ** 2 / np.sum(np.abs(direct) ** 2)
    interior = spec[:, 4:-4]
    share = np.abs(interior[k]) ** 2 / np.sum(np.abs(interior) ** 2, axis=0)
    lobe = np.sum(np.abs(interior[k - 1 : k + 2]) ** 2, axis=0) / np.sum(np.abs(interior) ** 2, axis=0)
    np.testing.assert_allclose(share, expected_share, atol=1e-9)
    assert np.all(lobe >= 0.9)
    assert np.argmax(np.abs(interior).mean(axis=1)) == k


@pytest.mark.parametrize("cfg", [SMALL, StftConfig(64, 16, "hann"), StftConfig()])
def test_round_trip(cfg, rng):
    x = rng.standard_normal((2, 3 * cfg.window_length + 17))
    y = istft(stft(x, cfg), cfg, x.shape[1])
    assert np.max(np.abs(x - y)) < 1e-10


def test_istft_zero_and_linearity(rng):
    S = stft(rng.standard_normal(400), SMALL)
    assert np.all(istft(np.zeros_like(S), SMALL) == 0)
    np.testing.assert_allclose(istft(2 * S, SMALL), 2 * istft(S, SMALL), atol=1e-12)


def test_stft_linearity(rng):
    a, b = rng.standard_normal((2, 700))
    np.testing.assert_allclose(stft(1.5 * a - 0.25 * b, SMALL), 1.5 * stft(a, SMALL) - 0.25 * stft(b, SMALL),
                               atol=1e-12)


def test_parseval_with_squared_window_cola(rng):
    cfg = StftConfig(64, 16, "hann")
    x = rng.standard_normal(1000)
    S = stft(x, cfg)
    L = cfg.window_length
    w2 = cfg.window() ** 2
    overlap = w2.reshape(-1, cfg.hop_length).sum(axis=0)
    assert np.ptp(overlap) < 1e-12
    frame_energy = (np.abs(S[0]) ** 2 + 2 * np.sum(np.abs(S[1:-1]) ** 2, axis=0) + np.abs(S[-1]) ** 2) / L
    np.testing.assert_allclose(frame_energy.sum() / overlap[0], np.sum(x**2), rtol=1e-6)


def test_magnitude_and_power():
    z = np.array([[3 + 4j, 0]])
    assert magnitude(z)[0, 0] == 5 and power(z)[0, 0] == 25
    assert np.all(power(np.zeros((2, 2))) == 0)


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=25, deadline=None)
def test_power_is_squared_magnitude(seed):
    z = np.random.default_rng(seed).standard_normal((3, 4)) * (1 + 1j)
    np.testing.assert_allclose(power(z), magnitude(z) ** 2)


def test_errors():
    with pytest.raises(ValueError, match="shorter than one window"):
        stft(np.zeros(10), SMALL)
    with pytest.raises(ConfigError, match="not COLA"):
        stft(np.zeros(500), StftConfig(64, 48, "hamming"))
    with pytest.raises(ConfigError):
        StftConfig(64, 0).validate()
    with pytest.raises(ValueError, match="frequency axis"):
        istft(np.zeros((10, 5), complex), SMALL)


@pytest.mark.parametrize("fmt,tol", [("float32", 1e-7), ("pcm16", 0.5 / 32768 + 1e-12)])
def test_wav_round_trip(tmp_path, rng, fmt, tol):
    x = rng.uniform(-0.9, 0.9, (2, 300))
    path = tmp_path / "x.wav"
    write_wav(path, x, 8000, fmt)
    y, rate = read_wav(path)
    assert rate == 8000 and y.shape == x.shape
    assert np.max(np.abs(x - y)) <= tol
