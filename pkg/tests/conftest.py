import numpy as np
import pytest

from spur import EventSpec, FoaClip, SceneSpec


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def naive_banded_covariance(spectra, bands):
    """Per-bin, per-channel-pair covariance reference; only frames vectorized."""
    x = spectra.frames
    out = np.zeros((spectra.n_frames, bands.n_bands, 4, 4), dtype=np.complex128)
    for b, (lo, hi) in enumerate(bands.bin_sets):
        for f in range(lo, hi):
            w = bands.weights[b, f]
            for i in range(4):
                for j in range(4):
                    out[:, b, i, j] += w * x[:, f, i] * np.conj(x[:, f, j])
        out[:, b] /= hi - lo
    return out


def make_noise_clip(rng, seconds=0.5, sample_rate=16000, scale=0.1) -> FoaClip:
    """Clip with four independent noise channels (not a physical sound field)."""
    n = int(seconds * sample_rate)
    return FoaClip(scale * rng.standard_normal((4, n)), sample_rate)


def random_psd(rng, batch=(), scale=1.0) -> np.ndarray:
    """Random Hermitian PSD 4x4 matrices, shape batch + (4, 4)."""
    a = rng.standard_normal(batch + (4, 4)) + 1j * rng.standard_normal(batch + (4, 4))
    return scale * (a @ np.conj(np.swapaxes(a, -1, -2)))


def random_rotation(rng) -> np.ndarray:
    """Uniform random proper rotation matrix via QR with det fix."""
    q, r = np.linalg.qr(rng.standard_normal((3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def static_scene(
    rng,
    azimuth_deg,
    elevation_deg,
    distance_m=1.0,
    duration=1.0,
    sample_rate=16000,
    seed=0,
    noise_snr_db=None,
) -> SceneSpec:
    """Single static anechoic event spanning the whole scene."""
    source = 0.1 * rng.standard_normal(int(duration * sample_rate))
    event = EventSpec(
        source=source,
        track_index=0,
        onset=0.0,
        offset=duration,
        trajectory=((0.0, azimuth_deg, elevation_deg, distance_m),),
    )
    return SceneSpec(
        duration=duration,
        sample_rate=sample_rate,
        events=(event,),
        seed=seed,
        noise_snr_db=noise_snr_db,
    )
