"""Short-time Fourier analysis/synthesis and WAV I/O.

Waveforms are float arrays shaped ``(n_channels, n_samples)`` (a 1-D array is
treated as a single channel). Spectrograms are complex arrays shaped
``(n_channels, n_bins, n_frames)`` with ``n_bins = window_length // 2 + 1``.
"""
from dataclasses import asdict, dataclass

import numpy as np
from scipy.io import wavfile
from scipy.signal import check_COLA, get_window

from .errors import ConfigError

WINDOW_KINDS = ("hamming", "hann")
DEFAULT_SAMPLE_RATE = 8000


@dataclass(frozen=True)
class StftConfig:
    """Analysis parameters, lengths in samples.

    The default is a 512 ms Hamming window with a 256 ms hop at 8 kHz.
    """

    window_length: int = 4096
    hop_length: int = 2048
    window_kind: str = "hamming"

    @classmethod
    def from_ms(cls, window_ms, hop_ms, sample_rate=DEFAULT_SAMPLE_RATE, window_kind="hamming"):
        return cls(
            int(round(window_ms * sample_rate / 1000)),
            int(round(hop_ms * sample_rate / 1000)),
            window_kind,
        )

    @property
    def n_bins(self):
        return self.window_length // 2 + 1

    def window(self):
        return get_window(self.window_kind, self.window_length, fftbins=True)

    def validate(self):
        if self.window_kind not in WINDOW_KINDS:
            raise ConfigError(f"window_kind must be one of {WINDOW_KINDS}, got {self.window_kind!r}")
        if self.window_length < 2 or self.window_length % 2:
            raise ConfigError(f"window_length must be an even integer >= 2, got {self.window_length}")
        if not 0 < self.hop_length <= self.window_length:
            raise ConfigError(
                f"hop_length must satisfy 0 < hop <= window_length, got {self.hop_length}"
            )
        if not check_COLA(self.window(), self.window_length, self.window_length - self.hop_length):
            raise ConfigError(
                f"{self.window_kind} window of {self.window_length} samples is not COLA "
                f"at hop {self.hop_length}"
            )
        return self

    def to_dict(self):
        return asdict(self)


def _as_2d(wave):
    wave = np.asarray(wave, dtype=float)
    if wave.ndim == 1:
        return wave[None, :], True
    if wave.ndim != 2:
        raise ValueError(f"waveform must be 1-D or (n_channels, n_samples), got shape {wave.shape}")
    return wave, False


def _padded_length(n_samples, cfg):
    L, hop = cfg.window_length, cfg.hop_length
    total = n_samples + 2 * L
    n_frames = -(-(total - L) // hop) + 1
    return (n_frames - 1) * hop + L, n_frames


def stft(wave, cfg=StftConfig()):
    """Windowed one-sided STFT.

    The signal is zero-padded by one full window at both ends (and at the end
    up to a whole number of hops), so every input sample is covered by the
    same number of frames.

    Parameters
    ----------
    wave : ndarray, shape (n_samples,) or (n_channels, n_samples)
    cfg : StftConfig

    Returns
    -------
    ndarray, complex, shape (n_bins, n_frames) or (n_channels, n_bins, n_frames)
    """
    cfg.validate()
    x, squeeze = _as_2d(wave)
    if not np.all(np.isfinite(x)):
        raise ValueError("waveform contains non-finite samples")
    L, hop = cfg.window_length, cfg.hop_length
    if x.shape[1] < L:
        raise ValueError(f"signal of {x.shape[1]} samples is shorter than one window ({L})")
    total, n_frames = _padded_length(x.shape[1], cfg)
    padded = np.zeros((x.shape[0], total))
    padded[:, L : L + x.shape[1]] = x
    frames = np.lib.stride_tricks.sliding_window_view(padded, L, axis=1)[:, ::hop]
    spec = np.fft.rfft(frames * cfg.window(), axis=-1).transpose(0, 2, 1)
    return spec[0] if squeeze else spec


def istft(spec, cfg=StftConfig(), length=None):
    """Least-squares overlap-add inverse of :func:`stft`.

    Each inverse frame is multiplied by the analysis window and the sum is
    normalized by the overlap-added squared window.

    Parameters
    ----------
    spec : ndarray, complex, shape (n_bins, n_frames) or (n_channels, n_bins, n_frames)
    cfg : StftConfig
    length : int, optional
        Number of output samples. Defaults to the padded length minus the two
        edge windows.
    """
    cfg.validate()
    spec = np.asarray(spec)
    squeeze = spec.ndim == 2
    if squeeze:
        spec = spec[None]
    if spec.ndim != 3:
        raise ValueError(f"spectrogram must be 2-D or 3-D, got shape {spec.shape}")
    L, hop = cfg.window_length, cfg.hop_length
    if spec.shape[1] != cfg.n_bins:
        raise ValueError(
            f"frequency axis has {spec.shape[1]} bins; window of {L} needs {cfg.n_bins}"
        )
    n_ch, _, n_frames = spec.shape
    win = cfg.window()
    frames = np.fft.irfft(spec.transpose(0, 2, 1), n=L, axis=-1) * win
    total = (n_frames - 1) * hop + L
    out = np.zeros((n_ch, total))
    norm = np.zeros(total)
    for j in range(n_frames):
        out[:, j * hop : j * hop + L] += frames[:, j]
        norm[j * hop : j * hop + L] += win**2
    if length is None:
        length = max(total - 2 * L, 0)
    if L + length > total:
        raise ValueError(f"requested length {length} exceeds the {total - 2 * L} available samples")
    denom = norm[L : L + length]
    if np.any(denom <= 1e-12):
        raise ConfigError("window overlap leaves samples without support")
    out = out[:, L : L + length] / denom
    return out[0] if squeeze else out


def magnitude(spec):
    return np.abs(spec)


def power(spec):
    return np.abs(spec) ** 2


def read_wav(path):
    """Read a WAV file.

    Returns
    -------
    samples : ndarray, shape (n_channels, n_samples), float64 in [-1, 1]
    sample_rate : int
    """
    rate, data = wavfile.read(path)
    if data.dtype == np.int16:
        data = data.astype(float) / 32768.0
    elif data.dtype == np.int32:
        data = data.astype(float) / 2147483648.0
    elif data.dtype == np.uint8:
        data = (data.astype(float) - 128.0) / 128.0
    else:
        data = data.astype(float)
    data = data[:, None] if data.ndim == 1 else data
    return np.ascontiguousarray(data.T), int(rate)


def write_wav(path, samples, sample_rate, fmt="float32"):
    """Write ``(n_channels, n_samples)`` samples as PCM16 or 32-bit float WAV."""
    if sample_rate <= 0:
        raise ValueError("sample_rate must be positive")
    x, _ = _as_2d(samples)
    if fmt == "pcm16":
        data = np.clip(np.round(x * 32768.0), -32768, 32767).astype(np.int16)
    elif fmt == "float32":
        data = x.astype(np.float32)
    else:
        raise ValueError(f"unknown WAV format {fmt!r}; use 'pcm16' or 'float32'")
    wavfile.write(path, int(sample_rate), data.T if data.shape[0] > 1 else data[0])
