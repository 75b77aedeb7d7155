"""Spectro-spatial covariance features: banded covariance, temporal smoothing,
and the real-valued 16-dimensional vectorization (with its exact inverse)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .foa import FoaClip
from .spectral import MelBands, StftConfig, StftTensor, mel_filterbank, stft

SQRT2 = np.sqrt(2.0)

# Off-diagonal conjugate pairs in canonical (row-major upper-triangle) order.
OFF_DIAG_PAIRS = ((0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3))


@dataclass(frozen=True)
class ExtractionConfig:
    """Everything between a canonical clip and its feature tensor."""

    stft: StftConfig = StftConfig()
    n_mel_bands: int = 64
    alpha: float = 0.8
    epsilon: float = 1e-10

    def __post_init__(self):
        if not 0.0 <= self.alpha < 1.0:
            raise ValidationError(f"alpha must be in [0, 1), got {self.alpha}")
        if not 0.0 < self.epsilon < 1.0:
            raise ValidationError(f"epsilon must be in (0, 1), got {self.epsilon}")


@dataclass(frozen=True)
class CovarianceSeries:
    """Per-frame, per-band 4x4 Hermitian channel covariances.

    cov has shape (n_frames, n_bands, 4, 4); alpha is recorded iff smoothed.
    """

    cov: np.ndarray
    smoothed: bool = False
    alpha: float | None = None

    def __post_init__(self):
        if self.cov.ndim != 4 or self.cov.shape[2:] != (4, 4):
            raise ValidationError(f"cov must be (n_frames, n_bands, 4, 4), got {self.cov.shape}")
        if self.smoothed != (self.alpha is not None):
            raise ValidationError("alpha must be present exactly when smoothed")

    @property
    def n_frames(self) -> int:
        return self.cov.shape[0]

    @property
    def n_bands(self) -> int:
        return self.cov.shape[1]

    def hermitian_deviation(self) -> float:
        """max over slices of ||C - C^H||_inf / (1 + ||C||_inf)."""
        dev = np.abs(self.cov - np.conj(self.cov.transpose(0, 1, 3, 2))).max(axis=(2, 3))
        scale = 1.0 + np.abs(self.cov).max(axis=(2, 3))
        return float((dev / scale).max(initial=0.0))

    def min_eigenvalue_ratio(self) -> float:
        """min over slices of lambda_min / trace (PSD slices give >= -tolerance)."""
        herm = 0.5 * (self.cov + np.conj(self.cov.transpose(0, 1, 3, 2)))
        eig = np.linalg.eigvalsh(herm)
        trace = np.einsum("nbii->nb", self.cov).real
        ratio = eig[..., 0] / np.maximum(trace, np.finfo(np.float64).tiny)
        return float(ratio.min(initial=0.0))


@dataclass(frozen=True)
class SscvTensor:
    """Real feature tensor of shape (n_frames, n_bands, 16).

    Channel 0 is log band power (floored); channels 1..15 are the remaining
    covariance components divided by the floored power.
    """

    values: np.ndarray
    epsilon: float

    def __post_init__(self):
        if self.values.ndim != 3 or self.values.shape[2] != 16:
            raise ValidationError(f"values must be (n_frames, n_bands, 16), got {self.values.shape}")

    @property
    def n_frames(self) -> int:
        return self.values.shape[0]

    @property
    def n_bands(self) -> int:
        return self.values.shape[1]


def banded_covariance(spectra: StftTensor, bands: MelBands) -> CovarianceSeries:
    """Weighted covariance of the 4 channels pooled over each mel band's bins.

    C(n, b) = (1/|B_b|) * sum_{f in B_b} W_b(f) X(n,f) X(n,f)^H
    """
    if bands.n_fft != spectra.n_fft or bands.sample_rate != spectra.sample_rate:
        raise ValidationError(
            f"filterbank built for n_fft={bands.n_fft}/{bands.sample_rate} Hz, "
            f"STFT is n_fft={spectra.n_fft}/{spectra.sample_rate} Hz"
        )
    x = spectra.frames
    out = np.empty((spectra.n_frames, bands.n_bands, 4, 4), dtype=np.complex128)
    for b, (lo, hi) in enumerate(bands.bin_sets):
        w = bands.weights[b, lo:hi] / (hi - lo)
        xb = x[:, lo:hi, :]
        out[:, b] = np.einsum("f,nfi,nfj->nij", w, xb, np.conj(xb), optimize=True)
    return CovarianceSeries(out, smoothed=False)


def smooth(cov: CovarianceSeries, alpha: float) -> CovarianceSeries:
    """One-pole recursive smoothing along the frame axis.

    C'(0) = C(0); C'(n) = (1 - alpha) C(n) + alpha C'(n-1).
    """
    if not 0.0 <= alpha < 1.0:
        raise ValidationError(f"alpha must be in [0, 1), got {alpha}")
    if cov.smoothed:
        raise ValidationError("covariance series is already smoothed")
    if alpha == 0.0:
        # exact identity, bit for bit (the recurrence would only flip signed zeros)
        return CovarianceSeries(cov.cov.copy(), smoothed=True, alpha=0.0)
    out = np.empty_like(cov.cov)
    out[0] = cov.cov[0]
    for n in range(1, cov.n_frames):
        out[n] = (1.0 - alpha) * cov.cov[n] + alpha * out[n - 1]
    return CovarianceSeries(out, smoothed=True, alpha=alpha)


def _component_stack(cov: np.ndarray) -> np.ndarray:
    """(..., 4, 4) Hermitian -> (..., 16) real components in canonical order:
    four diagonal powers, then sqrt(2)*Re / sqrt(2)*Im per upper-triangle pair."""
    r = np.empty(cov.shape[:-2] + (16,), dtype=np.float64)
    r[..., 0:4] = np.einsum("...ii->...i", cov).real
    for m, (i, j) in enumerate(OFF_DIAG_PAIRS):
        c = cov[..., i, j]
        r[..., 4 + 2 * m] = SQRT2 * c.real
        r[..., 5 + 2 * m] = SQRT2 * c.imag
    return r


def vectorize(cov: CovarianceSeries, epsilon: float = 1e-10) -> SscvTensor:
    """Flatten Hermitian covariances into the real 16-vector and normalize.

    The first component (W power) is floored at epsilon times the tensor-wide
    maximum power, keeping the log finite and the ratios gain-covariant; a
    fully silent series falls back to an absolute floor of epsilon.
    """
    r = _component_stack(cov.cov)
    r1 = r[..., 0]
    peak = float(r1.max(initial=0.0))
    floor = epsilon * peak if peak > 0.0 else epsilon
    r1_floored = np.maximum(r1, floor)
    values = np.empty_like(r)
    values[..., 0] = np.log(r1_floored)
    values[..., 1:] = r[..., 1:] / r1_floored[..., None]
    return SscvTensor(values, epsilon=epsilon)


def devectorize(sscv: SscvTensor) -> CovarianceSeries:
    """Exact inverse of vectorize above the power floor (test oracle).

    Rebuilds the Hermitian matrices with the floored power as the W diagonal.
    """
    values = sscv.values
    if not np.all(np.isfinite(values)):
        raise ValidationError("feature tensor contains non-finite values")
    r1 = np.exp(values[..., 0])
    r = np.empty_like(values)
    r[..., 0] = r1
    r[..., 1:] = values[..., 1:] * r1[..., None]

    cov = np.zeros(values.shape[:-1] + (4, 4), dtype=np.complex128)
    for i in range(4):
        cov[..., i, i] = r[..., i]
    for m, (i, j) in enumerate(OFF_DIAG_PAIRS):
        c = (r[..., 4 + 2 * m] + 1j * r[..., 5 + 2 * m]) / SQRT2
        cov[..., i, j] = c
        cov[..., j, i] = np.conj(c)
    return CovarianceSeries(cov, smoothed=False)


def extract_features(clip: FoaClip, cfg: ExtractionConfig = ExtractionConfig()) -> SscvTensor:
    """Full front end: STFT, banded covariance, smoothing, vectorization."""
    spectra = stft(clip, cfg.stft)
    bands = mel_filterbank(cfg.stft.n_fft, clip.sample_rate, cfg.n_mel_bands)
    cov = smooth(banded_covariance(spectra, bands), cfg.alpha)
    return vectorize(cov, cfg.epsilon)
