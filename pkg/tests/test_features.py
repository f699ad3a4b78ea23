import numpy as np
import pytest
from hypothesis import given, strategies as st

from naaqa import features as ft


def test_full_length_scene_fills_418_frames():
    n = int(round(17.82 * 48000))
    assert ft.n_valid_frames(n) == 418
    spec = ft.extract(np.random.default_rng(0).standard_normal(n) * 0.1, ft.PRESETS["clear2-long-stride"])
    assert spec.data.shape == (64, 418) and spec.valid_frames == 418


def test_short_stride_preset_frames():
    p = ft.PRESETS["clear2-short-stride"]
    assert p.target_frames == (int(round(17.82 * 48000)) - 512) // 512 + 1


@given(st.floats(1.0, 20000.0))
def test_mel_roundtrip(f):
    assert ft.mel_to_hz(ft.hz_to_mel(f)) == pytest.approx(f, rel=1e-9)


def test_filterbank_shape_and_partition():
    fb = ft.mel_filterbank()
    assert fb.shape == (64, 257)
    assert np.all(fb.sum(axis=1) > 0)
    assert fb.sum(axis=0).max() <= 1.0 + 1e-9
    assert fb.max() <= 1.0


def test_tone_energy_lands_in_its_band():
    t = np.arange(48000) / 48000
    spec = ft.melspec(np.sin(2 * np.pi * 3000 * t))
    band = int(spec.data.mean(axis=1).argmax())
    edges = ft.mel_to_hz(np.linspace(ft.hz_to_mel(20.0), ft.hz_to_mel(24000.0), 66))
    assert edges[band] < 3000 < edges[band + 2]


def test_too_short_waveform_raises():
    with pytest.raises(ft.FeatureError):
        ft.melspec(np.zeros(100))


@given(st.integers(2, 418), st.integers(0, 2**31 - 1))
def test_pad_keeps_valid_frames_and_zero_tail(valid, seed):
    data = np.random.default_rng(seed).standard_normal((4, valid))
    out = ft.pad_to(ft.Spectrogram(data, valid), 418)
    assert out.data.shape == (4, 418) and out.valid_frames == valid
    np.testing.assert_array_equal(out.data[:, :valid], data)
    assert not out.data[:, valid:].any()


def test_pad_overflow_raises():
    with pytest.raises(ft.FeatureError):
        ft.pad_to(ft.Spectrogram(np.zeros((2, 420)), 420), 418)


@given(st.integers(2, 300))
def test_resize_preserves_linear_ramps(valid):
    ramp = np.tile(np.linspace(0.0, 1.0, valid), (3, 1))
    out = ft.resize_bilinear(ft.Spectrogram(ramp, valid), 418)
    assert out.valid_frames == 418
    np.testing.assert_allclose(out.data[0], np.linspace(0.0, 1.0, 418), atol=1e-12)


def test_unknown_mode_raises():
    with pytest.raises(ft.FeatureError):
        ft.extract(np.zeros(48000), ft.PRESETS["clear2-long-stride"], "crop")


def test_norm_uses_valid_frames_only():
    a = ft.Spectrogram(np.array([[1.0, 3.0, 99.0]]), 2)
    stats = ft.fit_norm([a])
    assert (stats.mean, stats.std) == pytest.approx((2.0, 1.0))
    out = ft.normalize(a, stats)
    np.testing.assert_allclose(out.data, [[-1.0, 1.0, 0.0]])
    with pytest.raises(ft.FeatureError):
        ft.fit_norm([ft.Spectrogram(np.ones((1, 3)), 3)])


def test_norm_json_roundtrip():
    s = ft.NormStats(-3.5, 2.25, "train")
    assert ft.NormStats.from_json(s.to_json()) == s


def test_feature_file_roundtrip_and_bad_magic(tmp_path):
    spec = ft.Spectrogram(np.random.default_rng(1).standard_normal((64, 418)).astype(np.float32), 300, "x")
    ft.write_feature(tmp_path / "x.aqaf", spec)
    back = ft.read_feature(tmp_path / "x.aqaf")
    np.testing.assert_array_equal(back.data, spec.data)
    assert (back.valid_frames, back.scene_id) == (300, "x")
    (tmp_path / "bad.aqaf").write_bytes(b"NOPE" + bytes(32))
    with pytest.raises(ft.FeatureError):
        ft.read_feature(tmp_path / "bad.aqaf")
