"""STFT analysis and mel filterbank construction for the banded covariance."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ValidationError
from .foa import FoaClip


class Window(Enum):
    HANN = "hann"
    RECTANGULAR = "rectangular"


@dataclass(frozen=True)
class StftConfig:
    """Analysis parameters; defaults give 25 ms windows with a 10 ms hop at 16 kHz."""

    n_fft: int = 512
    win_length: int = 400
    hop: int = 160
    window: Window = Window.HANN

    def __post_init__(self):
        if self.n_fft < 2:
            raise ValidationError(f"n_fft must be >= 2, got {self.n_fft}")
        if not 1 <= self.win_length <= self.n_fft:
            raise ValidationError(
                f"win_length must be in [1, n_fft={self.n_fft}], got {self.win_length}"
            )
        if self.hop < 1:
            raise ValidationError(f"hop must be >= 1, got {self.hop}")


def window_samples(window: Window, win_length: int) -> np.ndarray:
    if window is Window.HANN:
        # periodic form, the usual choice for analysis windows
        return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(win_length) / win_length)
    return np.ones(win_length)


@dataclass(frozen=True)
class StftTensor:
    """One-sided STFT of all four channels, shape (n_frames, n_bins, 4).

    Frames lie fully inside the signal: n_frames = (n_samples - win_length)//hop + 1.
    """

    frames: np.ndarray
    n_fft: int
    hop: int
    win_length: int
    window: Window
    sample_rate: int

    def __post_init__(self):
        if self.frames.ndim != 3 or self.frames.shape[2] != 4:
            raise ValidationError(f"frames must be (n_frames, n_bins, 4), got {self.frames.shape}")
        if self.frames.shape[1] != self.n_fft // 2 + 1:
            raise ValidationError(
                f"n_bins {self.frames.shape[1]} inconsistent with n_fft {self.n_fft}"
            )

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def n_bins(self) -> int:
        return self.frames.shape[1]

    @property
    def frame_duration(self) -> float:
        return self.hop / self.sample_rate


def stft(clip: FoaClip, cfg: StftConfig = StftConfig()) -> StftTensor:
    """Short-time Fourier transform of all 4 channels with identical windowing.

    frames[n, f, m] = sum_t window(t) * x_m(n*hop + t) * exp(-2j*pi*f*t/n_fft),
    one-sided bins 0..n_fft/2, no centering, no partial final frame.
    """
    n_samples = clip.n_samples
    if n_samples < cfg.win_length:
        raise ValidationError(
            f"clip has {n_samples} samples, shorter than one window ({cfg.win_length})"
        )
    win = window_samples(cfg.window, cfg.win_length)
    # (4, n_frames, win_length) view, hop-strided, frames fully inside the signal
    segments = sliding_window_view(clip.samples, cfg.win_length, axis=1)[:, :: cfg.hop]
    spectra = np.fft.rfft(segments * win, n=cfg.n_fft, axis=2)
    return StftTensor(
        frames=np.ascontiguousarray(spectra.transpose(1, 2, 0)),
        n_fft=cfg.n_fft,
        hop=cfg.hop,
        win_length=cfg.win_length,
        window=cfg.window,
        sample_rate=clip.sample_rate,
    )


@dataclass(frozen=True)
class MelBands:
    """Triangular mel filterbank with rows normalized to sum to 1.

    bin_sets[b] is the half-open DFT-bin range (start, stop) where band b has
    positive weight; ranges are contiguous and non-empty.
    """

    n_bands: int
    weights: np.ndarray
    bin_sets: tuple[tuple[int, int], ...]
    n_fft: int
    sample_rate: int

    def __post_init__(self):
        if self.weights.shape != (self.n_bands, self.n_fft // 2 + 1):
            raise ValidationError(
                f"weights shape {self.weights.shape} inconsistent with "
                f"n_bands={self.n_bands}, n_fft={self.n_fft}"
            )


def hz_to_mel(hz):
    return 2595.0 * np.log10(1.0 + np.asarray(hz, dtype=np.float64) / 700.0)


def mel_to_hz(mel):
    return 700.0 * (10.0 ** (np.asarray(mel, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(n_fft: int, sample_rate: int, n_bands: int) -> MelBands:
    """Triangular filters with HTK mel spacing from 0 Hz to sample_rate/2.

    Each row is renormalized to sum to exactly 1 after the triangular weights
    are evaluated at the DFT bin frequencies.
    """
    n_bins = n_fft // 2 + 1
    if n_bands < 1:
        raise ValidationError(f"n_bands must be >= 1, got {n_bands}")
    if n_bands > n_bins:
        raise ValidationError(f"n_bands {n_bands} exceeds bin count {n_bins}")

    freqs = np.arange(n_bins) * (sample_rate / n_fft)
    edges = mel_to_hz(np.linspace(0.0, hz_to_mel(sample_rate / 2.0), n_bands + 2))
    lower = edges[:-2, None]
    center = edges[1:-1, None]
    upper = edges[2:, None]
    with np.errstate(divide="ignore", invalid="ignore"):
        rising = (freqs - lower) / (center - lower)
        falling = (upper - freqs) / (upper - center)
    weights = np.maximum(0.0, np.minimum(rising, falling))
    weights[~np.isfinite(weights)] = 0.0

    sums = weights.sum(axis=1)
    if np.any(sums == 0.0):
        empty = int(np.argmax(sums == 0.0))
        raise ValidationError(
            f"n_bands={n_bands} too large for n_fft={n_fft} at {sample_rate} Hz: "
            f"band {empty} covers no DFT bin"
        )
    weights /= sums[:, None]

    bin_sets = []
    for b in range(n_bands):
        nz = np.flatnonzero(weights[b])
        bin_sets.append((int(nz[0]), int(nz[-1]) + 1))
    return MelBands(
        n_bands=n_bands,
        weights=weights,
        bin_sets=tuple(bin_sets),
        n_fft=n_fft,
        sample_rate=sample_rate,
    )
