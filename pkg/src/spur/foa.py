"""FOA domain types, channel-convention handling, 4-channel WAV I/O, and rotation."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import ValidationError

SQRT3 = np.sqrt(3.0)

# Canonical channel order is (W, X, Y, Z); ACN first-order order is (W, Y, Z, X).
# Index i of the permutation gives the ACN slot holding canonical channel i.
_ACN_TO_WXYZ = np.array([0, 3, 1, 2])
_WXYZ_TO_ACN = np.argsort(_ACN_TO_WXYZ)


class FoaError(ValidationError):
    """Invalid FOA data or WAV file."""


class ChannelCountError(FoaError):
    """WAV file does not have the required channel count."""


class EncodingError(FoaError):
    """WAV encoding is not PCM16 or IEEE float32."""


class TruncatedFileError(FoaError):
    """WAV file ends before its declared chunk sizes."""


class Ordering(Enum):
    WXYZ = "wxyz"
    ACN = "acn"


class Normalization(Enum):
    SN3D = "sn3d"
    N3D = "n3d"


@dataclass(frozen=True)
class ChannelConvention:
    """Channel ordering plus per-channel normalization of a 4-channel FOA stream."""

    ordering: Ordering = Ordering.WXYZ
    normalization: Normalization = Normalization.SN3D


CANONICAL = ChannelConvention(Ordering.WXYZ, Normalization.SN3D)


def to_canonical(samples: np.ndarray, convention: ChannelConvention) -> np.ndarray:
    """Convert a (4, n) sample block from `convention` to canonical (W,X,Y,Z)/SN3D."""
    out = np.asarray(samples, dtype=np.float64)
    if convention.ordering is Ordering.ACN:
        out = out[_ACN_TO_WXYZ]
    if convention.normalization is Normalization.N3D:
        out = out.copy()
        out[1:] /= SQRT3
    return out


def from_canonical(samples: np.ndarray, convention: ChannelConvention) -> np.ndarray:
    """Convert a canonical (4, n) sample block to `convention`."""
    out = np.asarray(samples, dtype=np.float64)
    if convention.normalization is Normalization.N3D:
        out = out.copy()
        out[1:] *= SQRT3
    if convention.ordering is Ordering.ACN:
        out = out[_WXYZ_TO_ACN]
    return out


@dataclass(frozen=True)
class FoaClip:
    """4-channel ambisonic clip in canonical (W,X,Y,Z)/SN3D layout.

    `samples` has shape (4, n_samples); rows are W, X, Y, Z.
    """

    samples: np.ndarray
    sample_rate: int
    convention: ChannelConvention = field(default=CANONICAL)

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 2 or samples.shape[0] != 4:
            raise ChannelCountError(
                f"FOA clip needs exactly 4 equal-length channels, got shape {samples.shape}"
            )
        if int(self.sample_rate) <= 0:
            raise FoaError(f"sample_rate must be positive, got {self.sample_rate}")
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    @property
    def n_samples(self) -> int:
        return self.samples.shape[1]

    @property
    def duration(self) -> float:
        return self.n_samples / self.sample_rate


@dataclass(frozen=True)
class Rotation3:
    """Proper rotation of 3-space; orthogonality and det(+1) checked to 1e-12."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        if m.shape != (3, 3):
            raise ValidationError(f"rotation matrix must be 3x3, got {m.shape}")
        if np.max(np.abs(m.T @ m - np.eye(3))) > 1e-12:
            raise ValidationError("rotation matrix is not orthogonal within 1e-12")
        if abs(np.linalg.det(m) - 1.0) > 1e-12:
            raise ValidationError("rotation matrix determinant is not +1 within 1e-12")
        object.__setattr__(self, "matrix", m)

    @classmethod
    def identity(cls) -> "Rotation3":
        return cls(np.eye(3))

    @classmethod
    def yaw(cls, degrees: float) -> "Rotation3":
        """Rotation about +Z by `degrees` (positive rotates +X toward +Y)."""
        psi = np.deg2rad(degrees)
        c, s = np.cos(psi), np.sin(psi)
        return cls(np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]]))

    def compose(self, other: "Rotation3") -> "Rotation3":
        """Rotation equal to applying `other` first, then self."""
        return Rotation3(self.matrix @ other.matrix)


def rotate_field(clip: FoaClip, r: Rotation3) -> FoaClip:
    """Rotate the sound field by `r` in the listener frame.

    W is unchanged; each sample's (X, Y, Z) triple is replaced by R @ (X, Y, Z),
    so a plane wave previously heard from unit direction u moves to R @ u.
    """
    out = clip.samples.copy()
    out[1:4] = r.matrix @ clip.samples[1:4]
    return FoaClip(out, clip.sample_rate)


# ---------------------------------------------------------------------------
# RIFF/WAVE I/O (PCM16 and IEEE float32, little-endian)
# ---------------------------------------------------------------------------

_WAVE_PCM = 1
_WAVE_IEEE_FLOAT = 3
_PCM_SCALE = 32768.0


def read_wav(path) -> tuple[np.ndarray, int]:
    """Read a PCM16 or float32 WAV file.

    Returns (samples, sample_rate) with samples shaped (n_channels, n_samples),
    float64, integer PCM scaled to [-1, 1] by 1/32768.
    """
    raw = Path(path).read_bytes()
    if len(raw) < 12:
        raise TruncatedFileError(f"{path}: too short for a RIFF header")
    if raw[0:4] != b"RIFF" or raw[8:12] != b"WAVE":
        raise EncodingError(f"{path}: not a RIFF/WAVE file")

    fmt = None
    data = None
    pos = 12
    while pos + 8 <= len(raw):
        chunk_id = raw[pos : pos + 4]
        (chunk_size,) = struct.unpack_from("<I", raw, pos + 4)
        body = raw[pos + 8 : pos + 8 + chunk_size]
        if len(body) < chunk_size:
            raise TruncatedFileError(
                f"{path}: chunk {chunk_id!r} declares {chunk_size} bytes, "
                f"only {len(body)} present"
            )
        if chunk_id == b"fmt ":
            fmt = body
        elif chunk_id == b"data":
            data = body
        pos += 8 + chunk_size + (chunk_size & 1)  # chunks are word-aligned

    if fmt is None or len(fmt) < 16:
        raise TruncatedFileError(f"{path}: missing or short fmt chunk")
    audio_format, n_channels, sample_rate, _, _, bits = struct.unpack_from("<HHIIHH", fmt, 0)
    if data is None:
        raise TruncatedFileError(f"{path}: missing data chunk")

    if audio_format == _WAVE_PCM and bits == 16:
        flat = np.frombuffer(data[: len(data) - len(data) % 2], dtype="<i2")
        flat = flat.astype(np.float64) / _PCM_SCALE
    elif audio_format == _WAVE_IEEE_FLOAT and bits == 32:
        flat = np.frombuffer(data[: len(data) - len(data) % 4], dtype="<f4")
        flat = flat.astype(np.float64)
    else:
        raise EncodingError(
            f"{path}: unsupported encoding (format tag {audio_format}, {bits}-bit); "
            f"expected PCM16 or IEEE float32"
        )

    if n_channels < 1:
        raise ChannelCountError(f"{path}: channel count {n_channels} invalid")
    n_frames = flat.size // n_channels
    return flat[: n_frames * n_channels].reshape(n_frames, n_channels).T.copy(), sample_rate


def write_wav(path, samples: np.ndarray, sample_rate: int, encoding: str = "float32") -> None:
    """Write (n_channels, n_samples) data as a little-endian WAV file."""
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 2:
        raise FoaError(f"samples must be 2-D (channels, samples), got shape {samples.shape}")
    interleaved = samples.T
    if encoding == "float32":
        payload = interleaved.astype("<f4").tobytes()
        fmt_tag, bits = _WAVE_IEEE_FLOAT, 32
    elif encoding == "pcm16":
        scaled = np.clip(np.round(interleaved * _PCM_SCALE), -32768, 32767)
        payload = scaled.astype("<i2").tobytes()
        fmt_tag, bits = _WAVE_PCM, 16
    else:
        raise EncodingError(f"unsupported encoding {encoding!r}; use 'float32' or 'pcm16'")

    n_channels = samples.shape[0]
    block_align = n_channels * bits // 8
    header = struct.pack(
        "<4sI4s4sIHHIIHH4sI",
        b"RIFF",
        36 + len(payload),
        b"WAVE",
        b"fmt ",
        16,
        fmt_tag,
        n_channels,
        int(sample_rate),
        int(sample_rate) * block_align,
        block_align,
        bits,
        b"data",
        len(payload),
    )
    Path(path).write_bytes(header + payload)


def load_foa_wav(path, convention: ChannelConvention = CANONICAL) -> FoaClip:
    """Load a 4-channel WAV declared to be in `convention`, converting to canonical.

    The convention is never inferred from the file; the caller must state it.
    """
    samples, sample_rate = read_wav(path)
    if samples.shape[0] != 4:
        raise ChannelCountError(
            f"{path}: expected 4 channels, found {samples.shape[0]}"
        )
    return FoaClip(to_canonical(samples, convention), sample_rate)


def save_foa_wav(
    clip: FoaClip,
    path,
    convention: ChannelConvention = CANONICAL,
    encoding: str = "float32",
) -> None:
    """Write `clip` to disk in the given channel convention (float32 by default)."""
    write_wav(path, from_canonical(clip.samples, convention), clip.sample_rate, encoding)
