"""Log-Mel filterbank features."""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from spkver.errors import ConfigError, InputError

LOG_EPS = 1e-10


@dataclass(frozen=True)
class FeatureConfig:
    sample_rate: int = 16000
    win_ms: float = 25.0
    hop_ms: float = 10.0
    n_mels: int = 80
    fft_size: int = 512
    f_min: float = 20.0
    f_max: float = 7600.0

    def __post_init__(self):
        if not (self.win_ms > self.hop_ms > 0):
            raise ConfigError("need win_ms > hop_ms > 0")
        if self.n_mels != 80:
            raise ConfigError(f"n_mels must be 80, got {self.n_mels}")
        if self.fft_size < self.win_samples:
            raise ConfigError(f"fft_size {self.fft_size} shorter than window {self.win_samples}")
        if not (0 <= self.f_min < self.f_max <= self.sample_rate / 2):
            raise ConfigError("need 0 <= f_min < f_max <= sample_rate / 2")

    @property
    def win_samples(self) -> int:
        return int(round(self.sample_rate * self.win_ms / 1000))

    @property
    def hop_samples(self) -> int:
        return int(round(self.sample_rate * self.hop_ms / 1000))


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


@lru_cache(maxsize=8)
def mel_filterbank(cfg: FeatureConfig) -> np.ndarray:
    """Triangular filters on the HTK Mel scale, shape (n_mels, fft_size // 2 + 1)."""
    n_bins = cfg.fft_size // 2 + 1
    edges_hz = mel_to_hz(np.linspace(hz_to_mel(cfg.f_min), hz_to_mel(cfg.f_max), cfg.n_mels + 2))
    bin_hz = np.arange(n_bins) * cfg.sample_rate / cfg.fft_size
    lower, center, upper = edges_hz[:-2, None], edges_hz[1:-1, None], edges_hz[2:, None]
    rising = (bin_hz - lower) / (center - lower)
    falling = (upper - bin_hz) / (upper - center)
    fb = np.maximum(0.0, np.minimum(rising, falling))
    fb.setflags(write=False)
    return fb


@lru_cache(maxsize=8)
def _window(n: int) -> np.ndarray:
    w = np.hamming(n)
    w.setflags(write=False)
    return w


def num_frames(n_samples: int, cfg: FeatureConfig) -> int:
    return 1 + (n_samples - cfg.win_samples) // cfg.hop_samples


def compute_log_mel(wave: np.ndarray, cfg: FeatureConfig = FeatureConfig(), sample_rate: int | None = None) -> np.ndarray:
    """Return a (T, 80) float32 matrix of log Mel energies.

    Frames are taken without padding, so ``T = 1 + (len - win) // hop``.
    """
    wave = np.asarray(wave, dtype=np.float64)
    if wave.ndim != 1:
        raise InputError(f"expected mono waveform, got shape {wave.shape}")
    if sample_rate is not None and sample_rate != cfg.sample_rate:
        raise InputError(f"sample rate {sample_rate} does not match config {cfg.sample_rate}")
    win, hop = cfg.win_samples, cfg.hop_samples
    if len(wave) < win:
        raise InputError(f"waveform of {len(wave)} samples is shorter than one window ({win})")
    frames = np.lib.stride_tricks.sliding_window_view(wave, win)[::hop]
    spec = np.fft.rfft(frames * _window(win), n=cfg.fft_size, axis=1)
    power = spec.real**2 + spec.imag**2
    mel = power @ mel_filterbank(cfg).T
    return np.log(mel + LOG_EPS).astype(np.float32)


def mean_normalize(feats: np.ndarray) -> np.ndarray:
    """Subtract the per-coefficient mean over time."""
    feats = np.asarray(feats)
    mean = feats.mean(axis=0, keepdims=True, dtype=np.float64)
    return (feats - mean).astype(feats.dtype)
