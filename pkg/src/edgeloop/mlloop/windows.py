"""Sliding windows and log-band spectral features for audio classification."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import WindowLargerThanSignal

DEFAULT_SILENCE_RMS = 1e-4


@dataclass
class Window:
    index: int
    start: int
    samples: np.ndarray
    skipped: bool  # below the silence threshold; produces no model outputs


def sliding_windows(signal: np.ndarray, window_len: int, hop: int,
                    silence_rms_threshold: float = DEFAULT_SILENCE_RMS) -> list[Window]:
    """Cut a signal into overlapping windows, flagging silent ones.

    Window count is floor((len - window_len) / hop) + 1.
    """
    signal = np.asarray(signal, dtype=np.float64)
    if hop < 1:
        raise ValueError(f"hop must be >= 1, got {hop}")
    if window_len < 1 or window_len > signal.shape[0]:
        raise WindowLargerThanSignal(
            f"window_len {window_len} does not fit signal of {signal.shape[0]}")
    count = (signal.shape[0] - window_len) // hop + 1
    windows = []
    for index in range(count):
        start = index * hop
        samples = signal[start:start + window_len]
        rms = float(np.sqrt(np.mean(samples * samples)))
        windows.append(Window(index, start, samples, rms < silence_rms_threshold))
    return windows


def band_edges(bands: int, sample_rate_hz: int, f_min: float) -> np.ndarray:
    """Geometric band edges from f_min to the Nyquist frequency."""
    nyquist = sample_rate_hz / 2.0
    return f_min * (nyquist / f_min) ** (np.arange(bands + 1) / bands)


def band_spectrogram(window: np.ndarray, bands: int, sample_rate_hz: int,
                     f_min: float = 50.0) -> np.ndarray:
    """Log power in `bands` equal-log-width frequency bands.

    Magnitude spectrum via the discrete Fourier transform, power summed per
    band, log1p applied. Bins below f_min are ignored. Deterministic.
    """
    window = np.asarray(window, dtype=np.float64)
    if window.size == 0:
        raise ValueError("window must be non-empty")
    if bands < 1:
        raise ValueError("bands must be >= 1")
    spectrum = np.fft.rfft(window)
    power = np.abs(spectrum) ** 2
    freqs = np.fft.rfftfreq(window.shape[0], 1.0 / sample_rate_hz)
    edges = band_edges(bands, sample_rate_hz, f_min)
    index = np.searchsorted(edges, freqs, side="right") - 1
    index = np.clip(index, -1, bands - 1)
    out = np.zeros(bands, dtype=np.float64)
    valid = index >= 0
    np.add.at(out, index[valid], power[valid])
    return np.log1p(out)


def extract_features(signal: np.ndarray, window_len: int, hop: int,
                     bands: int, sample_rate_hz: int, f_min: float = 50.0,
                     silence_rms_threshold: float = DEFAULT_SILENCE_RMS,
                     ) -> tuple[list[int], np.ndarray, int, int]:
    """Features for every non-silent window of a signal.

    Returns (emitted window indices, feature matrix [n, bands],
    windows_total, windows_skipped).
    """
    windows = sliding_windows(signal, window_len, hop, silence_rms_threshold)
    emitted = [w for w in windows if not w.skipped]
    features = np.zeros((len(emitted), bands), dtype=np.float64)
    for row, window in enumerate(emitted):
        features[row] = band_spectrogram(window.samples, bands, sample_rate_hz, f_min)
    skipped = len(windows) - len(emitted)
    return [w.index for w in emitted], features, len(windows), skipped
