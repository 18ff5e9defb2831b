"""Signal-level augmentation transforms.

Speaking-rate resampling, small time shifts, additive noise at a target
SNR, and room-impulse-response convolution.  All transforms are pure
functions of their inputs; randomness lives in the data pipeline that
draws their arguments.
"""

import numpy as np
import scipy.signal

from .audio import AudioClip

RESAMPLE_RANGE = (0.85, 1.15)
SHIFT_RANGE = (-0.05, 0.05)

# samples quieter than this (absolute) count as silence for SNR energy
SILENCE_FLOOR = 1e-6


def resample_rate(clip: AudioClip, factor: float) -> AudioClip:
    """Time-scale a clip by ``factor`` (speaking-rate change).

    Output length is round(len / factor): factor > 1 shortens (faster
    speech), factor < 1 lengthens.
    """
    lo, hi = RESAMPLE_RANGE
    if not (lo <= factor <= hi):
        raise ValueError(f"resample factor {factor} outside [{lo}, {hi}]")
    n_out = int(round(len(clip) / factor))
    if n_out == len(clip):
        return AudioClip(clip.samples.copy(), clip.sample_rate)
    out = scipy.signal.resample(clip.samples, n_out)
    return AudioClip(out, clip.sample_rate)


def time_shift(clip: AudioClip, shift: float) -> AudioClip:
    """Shift content by ``shift`` seconds, zero-filling the vacated region."""
    lo, hi = SHIFT_RANGE
    if not (lo <= shift <= hi):
        raise ValueError(f"time shift {shift} outside [{lo}, {hi}]")
    n = int(round(shift * clip.sample_rate))
    out = np.zeros_like(clip.samples)
    if n >= 0:
        out[n:] = clip.samples[: len(clip) - n] if n < len(clip) else 0.0
    else:
        out[:n] = clip.samples[-n:]
    return AudioClip(out, clip.sample_rate)


def _fit_noise(noise: np.ndarray, n: int) -> np.ndarray:
    # tile if short, crop if long
    if len(noise) < n:
        reps = -(-n // len(noise))
        noise = np.tile(noise, reps)
    return noise[:n]


def mix_at_snr(clean: AudioClip, noise: AudioClip, snr_db: float) -> AudioClip:
    """Add noise scaled so the clean/noise energy ratio equals ``snr_db``.

    Energies are measured over the non-silent support of the clean signal,
    so silence-padded keyword clips get the requested SNR on the keyword
    itself rather than diluted by the padding.
    """
    if clean.sample_rate != noise.sample_rate:
        raise ValueError("sample rate mismatch between clean and noise")
    if len(noise) == 0:
        raise ValueError("empty noise clip")
    noise_fit = _fit_noise(noise.samples, len(clean))
    support = np.abs(clean.samples) > SILENCE_FLOOR
    if not support.any():
        raise ValueError("degenerate SNR: clean signal has no energy")
    e_clean = np.sum(clean.samples[support] ** 2)
    e_noise = np.sum(noise_fit[support] ** 2)
    if e_noise <= 0.0:
        raise ValueError("degenerate SNR: noise has no energy on clean support")
    gain = np.sqrt(e_clean / (e_noise * 10.0 ** (snr_db / 10.0)))
    return AudioClip(clean.samples + gain * noise_fit, clean.sample_rate)


def apply_rir(clip: AudioClip, rir: AudioClip) -> AudioClip:
    """Convolve with a room impulse response.

    Full convolution truncated to the input length, then peak-normalized
    back to the input's peak amplitude.
    """
    if clip.sample_rate != rir.sample_rate:
        raise ValueError("sample rate mismatch between clip and rir")
    if len(rir) == 0 or not np.any(rir.samples):
        raise ValueError("all-zero or empty rir")
    wet = scipy.signal.fftconvolve(clip.samples, rir.samples)[: len(clip)]
    peak_in = np.max(np.abs(clip.samples))
    peak_out = np.max(np.abs(wet))
    if peak_in > 0.0 and peak_out > 0.0:
        wet = wet * (peak_in / peak_out)
    return AudioClip(wet, clip.sample_rate)
