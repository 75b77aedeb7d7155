"""Intensity-vector DoA estimation and localization metrics.

With SN3D first-order channels, Re{W* X_k} is proportional to the source
direction cosines with a constant factor that cancels under normalization,
so no normalization-dependent correction is needed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .scene import SeldFrameLabels
from .sscv import CovarianceSeries

LABEL_FRAME_S = 0.1


def direction_from_angles(azimuth_deg, elevation_deg) -> np.ndarray:
    """Unit direction vector(s) for azimuth/elevation in degrees."""
    az = np.deg2rad(np.asarray(azimuth_deg, dtype=np.float64))
    el = np.deg2rad(np.asarray(elevation_deg, dtype=np.float64))
    return np.stack([np.cos(az) * np.cos(el), np.sin(az) * np.cos(el), np.sin(el)], axis=-1)


@dataclass(frozen=True)
class DoaEstimate:
    """Per-frame direction estimates.

    directions rows are unit vectors where confidence > 0 and zero where the
    frame carried no usable energy (flagged, never fabricated).
    """

    directions: np.ndarray
    confidence: np.ndarray

    def __post_init__(self):
        if self.directions.ndim != 2 or self.directions.shape[1] != 3:
            raise ValidationError(f"directions must be (n_frames, 3), got {self.directions.shape}")
        if self.confidence.shape != (self.directions.shape[0],):
            raise ValidationError("confidence must be one value per frame")

    @property
    def n_frames(self) -> int:
        return self.directions.shape[0]

    @property
    def valid(self) -> np.ndarray:
        return self.confidence > 0.0

    @property
    def azimuth_deg(self) -> np.ndarray:
        az = np.degrees(np.arctan2(self.directions[:, 1], self.directions[:, 0]))
        return np.where(self.valid, az, np.nan)

    @property
    def elevation_deg(self) -> np.ndarray:
        el = np.degrees(np.arcsin(np.clip(self.directions[:, 2], -1.0, 1.0)))
        return np.where(self.valid, el, np.nan)


def intensity_doa(cov: CovarianceSeries, band_weighting: str = "power") -> DoaEstimate:
    """Per-frame direction from the band-pooled acoustic intensity vector.

    I(n) = sum_b w_b * (Re C_WX, Re C_WY, Re C_WZ)(n, b), with w_b the band's
    W power by default ("power") or 1 ("uniform"). Confidence is the frame's
    summed W power; frames with zero intensity are flagged with confidence 0.
    """
    if band_weighting not in ("power", "uniform"):
        raise ValidationError(f"band_weighting must be 'power' or 'uniform', got {band_weighting!r}")
    w_power = cov.cov[:, :, 0, 0].real
    weights = w_power if band_weighting == "power" else np.ones_like(w_power)
    intensity = np.einsum("nb,nbk->nk", weights, cov.cov[:, :, 0, 1:4].real)

    norms = np.linalg.norm(intensity, axis=1)
    usable = norms > 0.0
    directions = np.zeros_like(intensity)
    directions[usable] = intensity[usable] / norms[usable, None]
    confidence = np.where(usable, w_power.sum(axis=1), 0.0)
    return DoaEstimate(directions=directions, confidence=confidence)


def angular_error(est, ref) -> np.ndarray | float:
    """Great-circle angle between direction vectors, in degrees."""
    a = np.asarray(est, dtype=np.float64)
    b = np.asarray(ref, dtype=np.float64)
    na = np.linalg.norm(a, axis=-1)
    nb = np.linalg.norm(b, axis=-1)
    if np.any(na == 0.0) or np.any(nb == 0.0):
        raise ValidationError("angular error of a zero-length vector is undefined")
    cos = np.clip(np.sum(a * b, axis=-1) / (na * nb), -1.0, 1.0)
    deg = np.degrees(np.arccos(cos))
    return float(deg) if deg.ndim == 0 else deg


@dataclass(frozen=True)
class SeldMetrics:
    localization_error_deg: float
    localization_recall: float
    threshold_deg: float
    n_reference: int
    n_matched: int

    def as_dict(self) -> dict:
        return {
            "localization_error_deg": self.localization_error_deg,
            "localization_recall": self.localization_recall,
            "threshold_deg": self.threshold_deg,
            "n_reference": self.n_reference,
            "n_matched": self.n_matched,
        }


def aggregate_to_label_frames(
    est: DoaEstimate, est_frame_s: float, n_label_frames: int
) -> DoaEstimate:
    """Pool feature-rate estimates down to 100 ms label frames by mean direction.

    The feature frame duration must divide the label frame duration by an
    integer factor; anything else is a frame-rate mismatch.
    """
    if est_frame_s <= 0.0:
        raise ValidationError(f"estimate frame duration must be positive, got {est_frame_s}")
    ratio = LABEL_FRAME_S / est_frame_s
    factor = int(round(ratio))
    if factor < 1 or abs(ratio - factor) > 1e-6 * factor:
        raise ValidationError(
            f"feature frame duration {est_frame_s} s does not divide the "
            f"{LABEL_FRAME_S} s label frame by an integer factor"
        )
    directions = np.zeros((n_label_frames, 3))
    confidence = np.zeros(n_label_frames)
    for k in range(n_label_frames):
        chunk = slice(k * factor, (k + 1) * factor)
        d = est.directions[chunk][est.valid[chunk]]
        if d.shape[0] == 0:
            continue
        mean = d.mean(axis=0)
        norm = np.linalg.norm(mean)
        if norm == 0.0:
            continue
        directions[k] = mean / norm
        confidence[k] = est.confidence[chunk].sum()
    return DoaEstimate(directions=directions, confidence=confidence)


def evaluate(
    est: DoaEstimate,
    ref: SeldFrameLabels,
    threshold_deg: float = 20.0,
    est_frame_s: float = LABEL_FRAME_S,
) -> SeldMetrics:
    """Match estimates to reference rows frame by frame.

    A reference row matches when an estimate exists at its label frame with
    angular error <= threshold; the error is averaged over matches only.
    """
    if not ref.rows:
        return SeldMetrics(float("nan"), 0.0, threshold_deg, 0, 0)
    n_label_frames = max(row.frame for row in ref.rows) + 1
    if abs(est_frame_s - LABEL_FRAME_S) > 1e-12:
        est = aggregate_to_label_frames(est, est_frame_s, n_label_frames)

    errors = []
    matched = 0
    for row in ref.rows:
        if row.frame >= est.n_frames or not est.valid[row.frame]:
            continue
        err = angular_error(
            est.directions[row.frame],
            direction_from_angles(row.azimuth_deg, row.elevation_deg),
        )
        if err <= threshold_deg:
            matched += 1
            errors.append(err)
    error = float(np.mean(errors)) if errors else float("nan")
    return SeldMetrics(
        localization_error_deg=error,
        localization_recall=matched / len(ref.rows),
        threshold_deg=threshold_deg,
        n_reference=len(ref.rows),
        n_matched=matched,
    )
