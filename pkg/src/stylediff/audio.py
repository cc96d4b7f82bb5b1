"""Griffin-Lim waveform rendering for listening smoke tests.

The synthetic corpus never touches real audio, so this module defines its own
invertible convention: mel values are treated as log10 magnitudes, spread
from 80 mel bins onto linear STFT bins with a triangular filterbank
transpose, and phase is recovered with Griffin-Lim. Audibility sugar only;
no fidelity claim.
"""

from __future__ import annotations

import numpy as np
from scipy import signal
from scipy.io import wavfile

from .mel import MelSpectrogram

SAMPLE_RATE = 16000
N_FFT = 512
HOP = 128


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + f / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (m / 2595.0) - 1.0)


def mel_filterbank(n_mels=80, n_fft=N_FFT, sample_rate=SAMPLE_RATE):
    """[n_mels, n_fft//2 + 1] triangular filters, peak-normalized."""
    n_bins = n_fft // 2 + 1
    fft_freqs = np.linspace(0, sample_rate / 2, n_bins)
    mel_points = np.linspace(hz_to_mel(0.0), hz_to_mel(sample_rate / 2), n_mels + 2)
    hz_points = mel_to_hz(mel_points)
    bank = np.zeros((n_mels, n_bins))
    for m in range(n_mels):
        lo, center, hi = hz_points[m : m + 3]
        up = (fft_freqs - lo) / max(center - lo, 1e-9)
        down = (hi - fft_freqs) / max(hi - center, 1e-9)
        bank[m] = np.clip(np.minimum(up, down), 0.0, None)
    return bank


def mel_to_waveform(mel: MelSpectrogram, n_iter: int = 64, seed: int = 0) -> np.ndarray:
    """Render a mel to a waveform via filterbank transpose + Griffin-Lim."""
    magnitude_mel = 10.0 ** mel.data.astype(np.float64)
    bank = mel_filterbank(n_mels=mel.n_mels)
    weights = bank.sum(axis=0)
    linear = bank.T @ magnitude_mel / np.maximum(weights, 1e-9)[:, None]
    return griffin_lim(linear, n_iter=n_iter, seed=seed)


def griffin_lim(magnitude: np.ndarray, n_iter: int = 64, seed: int = 0) -> np.ndarray:
    """Phase recovery by alternating STFT projections. magnitude: [n_bins, T]."""
    rng = np.random.default_rng(seed)
    angles = np.exp(2j * np.pi * rng.random(magnitude.shape))
    stft_kwargs = dict(nperseg=N_FFT, noverlap=N_FFT - HOP)
    spec = magnitude * angles
    for _ in range(n_iter):
        _, wave = signal.istft(spec, **stft_kwargs)
        _, _, rebuilt = signal.stft(wave, **stft_kwargs)
        frames = min(rebuilt.shape[1], magnitude.shape[1])
        phase = rebuilt[:, :frames] / np.maximum(np.abs(rebuilt[:, :frames]), 1e-12)
        spec = magnitude[:, :frames] * phase
    _, wave = signal.istft(spec, **stft_kwargs)
    peak = np.max(np.abs(wave))
    if peak > 0:
        wave = wave / peak * 0.95
    return wave.astype(np.float32)


def write_wav(path, wave: np.ndarray, sample_rate: int = SAMPLE_RATE) -> None:
    wavfile.write(path, sample_rate, (wave * 32767).astype(np.int16))
