import struct

import numpy as np
import pytest

from spur import (
    CANONICAL,
    ChannelConvention,
    FoaClip,
    Normalization,
    Ordering,
    Rotation3,
    ValidationError,
    load_foa_wav,
    rotate_field,
    save_foa_wav,
)
from spur.foa import (
    ChannelCountError,
    EncodingError,
    TruncatedFileError,
    from_canonical,
    read_wav,
    to_canonical,
    write_wav,
)

from conftest import make_noise_clip, random_rotation

ACN_SN3D = ChannelConvention(Ordering.ACN, Normalization.SN3D)
WXYZ_N3D = ChannelConvention(Ordering.WXYZ, Normalization.N3D)


class TestConventions:
    def test_acn_load_permutes_to_wxyz(self, rng, tmp_path):
        w, x, y, z = rng.standard_normal((4, 64)) * 0.5
        write_wav(tmp_path / "acn.wav", np.stack([w, y, z, x]), 16000)
        clip = load_foa_wav(tmp_path / "acn.wav", ACN_SN3D)
        expected = np.stack([w, x, y, z]).astype(np.float32).astype(np.float64)
        assert np.array_equal(clip.samples, expected)

    def test_n3d_load_rescales_directional_rows(self, rng, tmp_path):
        a = rng.standard_normal((4, 64)) * 0.4
        n3d = a.copy()
        n3d[1:] *= np.sqrt(3.0)
        write_wav(tmp_path / "n3d.wav", n3d, 16000)
        clip = load_foa_wav(tmp_path / "n3d.wav", WXYZ_N3D)
        stored = n3d.astype(np.float32).astype(np.float64)
        stored[1:] /= np.sqrt(3.0)
        np.testing.assert_allclose(clip.samples, stored, rtol=0, atol=1e-12)

    def test_two_channel_file_is_a_channel_count_error(self, rng, tmp_path):
        write_wav(tmp_path / "stereo.wav", rng.standard_normal((2, 32)), 16000)
        with pytest.raises(ChannelCountError):
            load_foa_wav(tmp_path / "stereo.wav")

    def test_permutation_roundtrip_is_bitwise(self, rng):
        samples = rng.standard_normal((4, 100))
        back = to_canonical(from_canonical(samples, ACN_SN3D), ACN_SN3D)
        assert np.array_equal(back, samples)

    def test_scaling_roundtrip_within_1e12(self, rng):
        samples = rng.standard_normal((4, 100))
        back = to_canonical(from_canonical(samples, WXYZ_N3D), WXYZ_N3D)
        np.testing.assert_allclose(back, samples, rtol=0, atol=1e-12)


class TestWavIO:
    @pytest.mark.parametrize(
        "convention", [CANONICAL, ACN_SN3D, WXYZ_N3D, ChannelConvention(Ordering.ACN, Normalization.N3D)]
    )
    def test_float32_roundtrip_any_convention(self, rng, tmp_path, convention):
        clip = make_noise_clip(rng, seconds=0.01)
        path = tmp_path / "clip.wav"
        save_foa_wav(clip, path, convention)
        back = load_foa_wav(path, convention)
        assert back.sample_rate == clip.sample_rate
        tol = 1e-7 if convention.normalization is Normalization.SN3D else 1e-6
        np.testing.assert_allclose(back.samples, clip.samples, rtol=0, atol=tol)

    def test_pcm16_roundtrip_within_quantization(self, rng, tmp_path):
        clip = make_noise_clip(rng, seconds=0.01, scale=0.1)
        path = tmp_path / "clip16.wav"
        save_foa_wav(clip, path, encoding="pcm16")
        back = load_foa_wav(path)
        np.testing.assert_allclose(back.samples, clip.samples, rtol=0, atol=0.5 / 32768.0 + 1e-12)

    def test_pcm16_scale_is_1_over_32768(self, tmp_path):
        payload = np.array([16384, -32768, 0, 32767], dtype="<i2").tobytes()
        header = struct.pack(
            "<4sI4s4sIHHIIHH4sI",
            b"RIFF", 36 + len(payload), b"WAVE", b"fmt ", 16, 1, 4, 16000,
            16000 * 8, 8, 16, b"data", len(payload),
        )
        (tmp_path / "q.wav").write_bytes(header + payload)
        samples, rate = read_wav(tmp_path / "q.wav")
        np.testing.assert_array_equal(
            samples[:, 0], [16384 / 32768, -1.0, 0.0, 32767 / 32768]
        )

    def test_unsupported_encoding_reported(self, rng, tmp_path):
        path = tmp_path / "f64.wav"
        # format tag 3 but 64-bit: not a supported combination
        payload = rng.standard_normal(16).astype("<f8").tobytes()
        header = struct.pack(
            "<4sI4s4sIHHIIHH4sI",
            b"RIFF", 36 + len(payload), b"WAVE", b"fmt ", 16, 3, 4, 16000,
            16000 * 32, 32, 64, b"data", len(payload),
        )
        path.write_bytes(header + payload)
        with pytest.raises(EncodingError):
            read_wav(path)

    def test_truncated_file_reported(self, rng, tmp_path):
        path = tmp_path / "cut.wav"
        save_foa_wav(make_noise_clip(rng, seconds=0.01), path)
        raw = path.read_bytes()
        path.write_bytes(raw[: len(raw) // 2])
        with pytest.raises(TruncatedFileError):
            read_wav(path)

    def test_not_a_wav_reported(self, tmp_path):
        (tmp_path / "x.wav").write_bytes(b"OggS" + b"\0" * 64)
        with pytest.raises(EncodingError):
            read_wav(tmp_path / "x.wav")


class TestRotation:
    def test_identity_is_bit_identical(self, rng):
        clip = make_noise_clip(rng, seconds=0.01)
        out = rotate_field(clip, Rotation3.identity())
        assert np.array_equal(out.samples, clip.samples)

    def test_w_only_clip_is_rotation_invariant(self, rng):
        samples = np.zeros((4, 128))
        samples[0] = rng.standard_normal(128)
        clip = FoaClip(samples, 16000)
        out = rotate_field(clip, Rotation3(random_rotation(rng)))
        assert np.array_equal(out.samples, clip.samples)

    def test_composition(self, rng):
        clip = make_noise_clip(rng, seconds=0.01)
        r1 = Rotation3(random_rotation(rng))
        r2 = Rotation3(random_rotation(rng))
        twice = rotate_field(rotate_field(clip, r1), r2)
        once = rotate_field(clip, r2.compose(r1))
        np.testing.assert_allclose(twice.samples, once.samples, rtol=0, atol=1e-12)

    def test_directional_energy_preserved(self, rng):
        clip = make_noise_clip(rng, seconds=0.01)
        out = rotate_field(clip, Rotation3(random_rotation(rng)))
        np.testing.assert_allclose(
            (out.samples[1:] ** 2).sum(axis=0),
            (clip.samples[1:] ** 2).sum(axis=0),
            rtol=0,
            atol=1e-12,
        )

    def test_non_orthogonal_matrix_rejected(self):
        with pytest.raises(ValidationError):
            Rotation3(np.eye(3) * 1.1)
        with pytest.raises(ValidationError):
            Rotation3(np.diag([1.0, 1.0, -1.0]))  # det -1


class TestClipInvariants:
    def test_wrong_channel_count_rejected(self, rng):
        with pytest.raises(ChannelCountError):
            FoaClip(rng.standard_normal((3, 10)), 16000)

    def test_bad_sample_rate_rejected(self, rng):
        with pytest.raises(ValidationError):
            FoaClip(rng.standard_normal((4, 10)), 0)
