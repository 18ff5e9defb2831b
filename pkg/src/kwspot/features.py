"""Log-mel filterbank frontend.

Converts raw audio into the 40 x T feature maps the embedding model
consumes: Hann-windowed power spectra (25 ms window, 10 ms hop, 512-point
FFT) run through triangular HTK-mel filters, max-normalized over the whole
map and natural-log compressed.
"""

from dataclasses import dataclass

import numpy as np

from .audio import CANONICAL_RATE, AudioClip


@dataclass(frozen=True)
class FrontendConfig:
    n_mels: int = 40
    window_len: float = 0.025
    hop: float = 0.010
    fft_size: int = 512
    mel_low: float = 20.0
    mel_high: float = 7600.0
    floor_eps: float = 1e-6

    def __post_init__(self):
        if not (self.window_len > self.hop > 0):
            raise ValueError("require window_len > hop > 0")
        if self.n_mels < 1:
            raise ValueError("n_mels must be >= 1")
        if not (0 <= self.mel_low < self.mel_high):
            raise ValueError("require 0 <= mel_low < mel_high")
        if self.floor_eps <= 0:
            raise ValueError("floor_eps must be positive")

    def window_samples(self, rate: int) -> int:
        return int(round(self.window_len * rate))

    def hop_samples(self, rate: int) -> int:
        return int(round(self.hop * rate))


@dataclass
class FeatureMap:
    """n_mels x T matrix of log mel energies plus per-frame center times."""

    values: np.ndarray
    frame_times: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.frame_times = np.asarray(self.frame_times, dtype=np.float64)
        if self.values.ndim != 2:
            raise ValueError("values must be 2-D (n_mels, T)")
        if self.values.shape[1] != len(self.frame_times):
            raise ValueError("frame_times length must match frame count")

    @property
    def n_frames(self) -> int:
        return self.values.shape[1]


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_center_freqs(cfg: FrontendConfig) -> np.ndarray:
    """Center frequency (Hz) of each triangular filter."""
    pts = np.linspace(hz_to_mel(cfg.mel_low), hz_to_mel(cfg.mel_high), cfg.n_mels + 2)
    return mel_to_hz(pts)[1:-1]


def mel_filterbank(cfg: FrontendConfig, rate: int = CANONICAL_RATE) -> np.ndarray:
    """Triangular unit-peak mel filterbank, shape (n_mels, fft_size//2 + 1)."""
    if cfg.mel_high > rate / 2:
        raise ValueError("mel_high exceeds Nyquist")
    n_bins = cfg.fft_size // 2 + 1
    freqs = np.arange(n_bins) * (rate / cfg.fft_size)
    pts = mel_to_hz(np.linspace(hz_to_mel(cfg.mel_low), hz_to_mel(cfg.mel_high), cfg.n_mels + 2))
    fb = np.zeros((cfg.n_mels, n_bins))
    for m in range(cfg.n_mels):
        lo, ctr, hi = pts[m], pts[m + 1], pts[m + 2]
        rising = (freqs - lo) / (ctr - lo)
        falling = (hi - freqs) / (hi - ctr)
        fb[m] = np.clip(np.minimum(rising, falling), 0.0, None)
    return fb


def frame_count(n_samples: int, window: int, hop: int) -> int:
    """T = floor((L - window) / hop) + 1; requires L >= window."""
    if n_samples < window:
        raise ValueError("audio too short")
    return (n_samples - window) // hop + 1


def _hann(n: int) -> np.ndarray:
    # periodic Hann, the usual STFT analysis window
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def frame_signal(samples: np.ndarray, window: int, hop: int) -> np.ndarray:
    """Slice a signal into (T, window) frames; no padding."""
    n_frames = frame_count(len(samples), window, hop)
    idx = np.arange(window)[None, :] + hop * np.arange(n_frames)[:, None]
    return samples[idx]


def mel_energies(clip: AudioClip, cfg: FrontendConfig) -> np.ndarray:
    """Raw (un-normalized) mel power energies, shape (n_mels, T)."""
    if clip.sample_rate != CANONICAL_RATE:
        raise ValueError(
            f"expected canonical rate {CANONICAL_RATE} Hz, got {clip.sample_rate}"
        )
    win = cfg.window_samples(clip.sample_rate)
    hop = cfg.hop_samples(clip.sample_rate)
    if cfg.fft_size < win:
        raise ValueError("fft_size smaller than window")
    frames = frame_signal(clip.samples, win, hop) * _hann(win)
    spec = np.fft.rfft(frames, n=cfg.fft_size, axis=1)
    power = spec.real**2 + spec.imag**2
    return mel_filterbank(cfg, clip.sample_rate) @ power.T


def normalize_log(energies: np.ndarray, floor_eps: float) -> np.ndarray:
    """Max-normalize a mel-energy map to peak 1, then natural log with floor."""
    peak = energies.max()
    if peak <= 0.0:
        return np.full_like(energies, np.log(floor_eps))
    return np.log(np.maximum(energies / peak, floor_eps))


def compute_logmel(clip: AudioClip, cfg: FrontendConfig = FrontendConfig()) -> FeatureMap:
    """Full frontend: framing -> Hann -> power FFT -> mel -> max-norm -> log.

    All-zero audio degenerates to a map filled with log(floor_eps).
    """
    energies = mel_energies(clip, cfg)
    win = cfg.window_samples(clip.sample_rate)
    hop = cfg.hop_samples(clip.sample_rate)
    times = (np.arange(energies.shape[1]) * hop + win / 2) / clip.sample_rate
    return FeatureMap(normalize_log(energies, cfg.floor_eps), times)
