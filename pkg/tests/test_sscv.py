import numpy as np
import pytest

from spur import (
    CovarianceSeries,
    ExtractionConfig,
    FoaClip,
    Rotation3,
    SscvTensor,
    ValidationError,
    banded_covariance,
    devectorize,
    extract_features,
    mel_filterbank,
    rotate_field,
    smooth,
    stft,
    vectorize,
)

from conftest import make_noise_clip, naive_banded_covariance, random_psd, random_rotation

SQRT2 = np.sqrt(2.0)


def cov_of(clip, n_bands=64):
    spectra = stft(clip)
    bands = mel_filterbank(spectra.n_fft, clip.sample_rate, n_bands)
    return banded_covariance(spectra, bands)


class TestBandedCovariance:
    def test_w_only_clip_concentrates_in_c11(self, rng):
        samples = np.zeros((4, 8000))
        samples[0] = 0.1 * rng.standard_normal(8000)
        cov = cov_of(FoaClip(samples, 16000)).cov
        c11 = cov[:, :, 0, 0].real
        rest = cov.copy()
        rest[:, :, 0, 0] = 0
        assert np.abs(rest).max() <= 1e-12 * c11.max()

    def test_identical_channels_give_rank_one_ones(self, rng):
        mono = 0.1 * rng.standard_normal(8000)
        cov = cov_of(FoaClip(np.tile(mono, (4, 1)), 16000)).cov
        expected = cov[:, :, 0, 0][..., None, None] * np.ones((4, 4))
        np.testing.assert_allclose(cov, expected, rtol=0, atol=1e-9 * np.abs(cov).max())

    def test_matches_naive_reference(self, rng):
        clip = make_noise_clip(rng, seconds=1.0)
        spectra = stft(clip)
        bands = mel_filterbank(spectra.n_fft, clip.sample_rate, 64)
        fast = banded_covariance(spectra, bands).cov
        slow = naive_banded_covariance(spectra, bands)
        assert np.abs(fast - slow).max() <= 1e-10 * np.abs(slow).max()

    def test_band_bin_mismatch_rejected(self, rng):
        clip = make_noise_clip(rng, seconds=0.1)
        with pytest.raises(ValidationError):
            banded_covariance(stft(clip), mel_filterbank(256, 16000, 16))
        with pytest.raises(ValidationError):
            banded_covariance(stft(clip), mel_filterbank(512, 48000, 16))

    def test_rotation_equivariance(self, rng):
        clip = make_noise_clip(rng, seconds=0.2)
        r = Rotation3(random_rotation(rng))
        q = np.zeros((4, 4))
        q[0, 0] = 1.0
        q[1:, 1:] = r.matrix
        base = cov_of(clip, n_bands=32).cov
        rotated = cov_of(rotate_field(clip, r), n_bands=32).cov
        expected = np.einsum("ij,nbjk,lk->nbil", q, base, q)
        num = np.linalg.norm(rotated - expected, axis=(2, 3))
        den = np.linalg.norm(base, axis=(2, 3))
        assert (num / den).max() <= 1e-9

    def test_hermitian_and_psd(self, rng):
        cov = cov_of(make_noise_clip(rng, seconds=0.2), n_bands=32)
        assert cov.hermitian_deviation() <= 1e-12
        assert cov.min_eigenvalue_ratio() >= -1e-8


class TestSmooth:
    def test_alpha_zero_is_bitwise_identity(self, rng):
        cov = cov_of(make_noise_clip(rng, seconds=0.1), n_bands=16)
        out = smooth(cov, 0.0)
        assert np.array_equal(out.cov, cov.cov)
        assert out.smoothed and out.alpha == 0.0

    def test_constant_input_is_fixed_point(self, rng):
        k = random_psd(rng)
        series = CovarianceSeries(np.broadcast_to(k, (50, 2, 4, 4)).copy())
        for alpha in (0.5, 0.8, 0.99):
            out = smooth(series, alpha).cov
            np.testing.assert_allclose(out, series.cov, rtol=1e-12)

    def test_impulse_response_is_geometric(self, rng):
        data = np.zeros((40, 1, 4, 4), dtype=np.complex128)
        data[0] = random_psd(rng)
        for alpha in (0.5, 0.8, 0.99):
            out = smooth(CovarianceSeries(data), alpha).cov
            assert np.array_equal(out[0], data[0])
            for n in range(1, 40):
                assert np.array_equal(out[n], alpha * out[n - 1])

    def test_double_smoothing_rejected(self, rng):
        cov = cov_of(make_noise_clip(rng, seconds=0.1), n_bands=16)
        with pytest.raises(ValidationError):
            smooth(smooth(cov, 0.5), 0.5)

    def test_bad_alpha_rejected(self, rng):
        cov = cov_of(make_noise_clip(rng, seconds=0.1), n_bands=16)
        for alpha in (-0.1, 1.0, 1.5):
            with pytest.raises(ValidationError):
                smooth(cov, alpha)

    def test_smoothing_preserves_hermitian_psd(self, rng):
        cov = smooth(cov_of(make_noise_clip(rng, seconds=0.2), n_bands=32), 0.8)
        assert cov.hermitian_deviation() <= 1e-12
        assert cov.min_eigenvalue_ratio() >= -1e-8

    def test_smoothing_preserves_rotation_equivariance(self, rng):
        clip = make_noise_clip(rng, seconds=0.2)
        r = Rotation3(random_rotation(rng))
        q = np.zeros((4, 4))
        q[0, 0] = 1.0
        q[1:, 1:] = r.matrix
        base = smooth(cov_of(clip, n_bands=16), 0.8).cov
        rotated = smooth(cov_of(rotate_field(clip, r), n_bands=16), 0.8).cov
        expected = np.einsum("ij,nbjk,lk->nbil", q, base, q)
        num = np.linalg.norm(rotated - expected, axis=(2, 3))
        den = np.linalg.norm(base, axis=(2, 3))
        assert (num / den).max() <= 1e-9


class TestVectorize:
    def test_identity_covariance(self):
        series = CovarianceSeries(np.eye(4, dtype=np.complex128)[None, None])
        values = vectorize(series).values[0, 0]
        expected = np.array([0.0, 1.0, 1.0, 1.0] + [0.0] * 12)
        assert np.array_equal(values, expected)

    def test_off_diagonal_conjugate_pair_transform(self):
        cov = np.eye(4, dtype=np.complex128)
        cov[0, 1] = 1.0 + 2.0j
        cov[1, 0] = 1.0 - 2.0j
        values = vectorize(CovarianceSeries(cov[None, None])).values[0, 0]
        assert values[4] == SQRT2 * 1.0
        assert values[5] == SQRT2 * 2.0
        np.testing.assert_allclose([values[4], values[5]], [1.41421, 2.82843], atol=5e-6)

    def test_roundtrip_vectorize_then_devectorize(self, rng):
        cov = CovarianceSeries(random_psd(rng, batch=(1000, 1)))
        back = devectorize(vectorize(cov)).cov
        assert np.abs(back - cov.cov).max() <= 1e-10 * np.abs(cov.cov).max()

    def test_roundtrip_devectorize_then_vectorize(self, rng):
        values = np.empty((500, 1, 16))
        values[..., 0] = rng.uniform(-4.0, 4.0, (500, 1))
        values[..., 1:4] = rng.uniform(0.1, 3.0, (500, 1, 3))
        values[..., 4:] = rng.uniform(-2.0, 2.0, (500, 1, 12))
        sscv = SscvTensor(values, epsilon=1e-10)
        again = vectorize(devectorize(sscv)).values
        assert np.abs(again - values).max() <= 1e-10 * np.abs(values).max()

    def test_devectorize_identity_vector(self):
        values = np.array([0.0, 1.0, 1.0, 1.0] + [0.0] * 12)[None, None]
        cov = devectorize(SscvTensor(values, epsilon=1e-10)).cov[0, 0]
        assert np.array_equal(cov, np.eye(4, dtype=np.complex128))

    def test_devectorize_rejects_non_finite(self):
        values = np.zeros((1, 1, 16))
        values[0, 0, 3] = np.inf
        with pytest.raises(ValidationError):
            devectorize(SscvTensor(values, epsilon=1e-10))

    def test_silence_floor_keeps_log_finite(self):
        series = CovarianceSeries(np.zeros((3, 2, 4, 4), dtype=np.complex128))
        values = vectorize(series, epsilon=1e-10).values
        assert np.all(np.isfinite(values))
        assert np.all(values[..., 0] == np.log(1e-10))
        assert not values[..., 1:].any()
        # every frame identical
        assert np.array_equal(values, np.broadcast_to(values[0, 0], values.shape))


class TestExtractFeatures:
    def test_silence_clip(self):
        clip = FoaClip(np.zeros((4, 8000)), 16000)
        feats = extract_features(clip)
        assert np.all(np.isfinite(feats.values))
        assert np.array_equal(
            feats.values, np.broadcast_to(feats.values[0, 0], feats.values.shape)
        )

    def test_deterministic(self, rng):
        clip = make_noise_clip(rng, seconds=0.3)
        a = extract_features(clip).values
        b = extract_features(clip).values
        assert np.array_equal(a, b)

    def test_matches_stage_composition_exactly(self, rng):
        clip = make_noise_clip(rng, seconds=0.3)
        cfg = ExtractionConfig()
        spectra = stft(clip, cfg.stft)
        bands = mel_filterbank(cfg.stft.n_fft, clip.sample_rate, cfg.n_mel_bands)
        staged = vectorize(smooth(banded_covariance(spectra, bands), cfg.alpha), cfg.epsilon)
        assert np.array_equal(extract_features(clip, cfg).values, staged.values)

    def test_default_10s_shape(self, rng):
        clip = make_noise_clip(rng, seconds=10.0)
        feats = extract_features(clip)
        assert feats.values.shape == (998, 64, 16)

    def test_scale_covariance(self, rng):
        clip = make_noise_clip(rng, seconds=0.3)
        gain = 3.7
        base = extract_features(clip).values
        scaled = extract_features(FoaClip(gain * clip.samples, clip.sample_rate)).values
        np.testing.assert_allclose(
            scaled[..., 0] - base[..., 0], 2.0 * np.log(gain), rtol=0, atol=1e-9
        )
        np.testing.assert_allclose(scaled[..., 1:], base[..., 1:], rtol=0, atol=1e-9)
