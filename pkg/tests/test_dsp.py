import numpy as np
import pytest
from hypothesis import given, strategies as st

from naaqa import dsp
from naaqa.audio_io import quantize, read_wav, write_wav

SR = dsp.SAMPLE_RATE


def sine(freq=997.0, amp=1.0, seconds=5.0, sr=SR):
    t = np.arange(int(seconds * sr)) / sr
    return amp * np.sin(2 * np.pi * freq * t)


def test_full_scale_997hz_reads_minus_3_01():
    assert dsp.lufs_integrated(sine()) == pytest.approx(-3.01, abs=0.1)


def test_k_weighting_response_shape():
    k = dsp.KWeightingFilter.for_rate(SR)
    assert k.response_db(20.0) < -10
    assert abs(k.response_db(997.0)) < 1.0
    assert k.response_db(10000.0) == pytest.approx(4.0, abs=0.5)


def test_coefficients_at_48k_match_formula():
    k = dsp.KWeightingFilter.for_rate(SR)
    np.testing.assert_allclose(k.stage1[0], dsp._shelf_coefficients(SR)[0], atol=1e-8)
    np.testing.assert_allclose(k.stage2[1], dsp._highpass_coefficients(SR)[1], atol=1e-8)


@given(st.floats(-30.0, 0.0))
def test_gain_law(gain_db):
    x = sine(amp=0.5, seconds=2.0)
    ref = dsp.lufs_integrated(x)
    got = dsp.lufs_integrated(x * 10 ** (gain_db / 20))
    assert got - ref == pytest.approx(gain_db, abs=0.05)


def test_silence_is_minus_inf_and_short_input_raises():
    assert dsp.lufs_integrated(np.zeros(SR)) == float("-inf")
    with pytest.raises(dsp.DSPError):
        dsp.lufs_integrated(np.zeros(100))
    with pytest.raises(dsp.DSPError):
        dsp.lufs_integrated(np.zeros((2, SR)))


def test_relative_gate_ignores_quiet_tail():
    loud = sine(amp=0.5, seconds=3.0)
    both = np.concatenate([loud, 1e-3 * sine(seconds=3.0)])
    # without the gate the average power halves (-3 LU); straddling blocks cost a little
    assert dsp.lufs_integrated(both) == pytest.approx(dsp.lufs_integrated(loud), abs=0.3)


@given(st.floats(200.0, 8000.0))
def test_centroid_of_pure_tone_is_its_frequency(freq):
    assert dsp.spectral_centroid(sine(freq, seconds=0.5)) == pytest.approx(freq, rel=0.05)


def test_centroid_of_silence_raises():
    with pytest.raises(dsp.DSPError):
        dsp.spectral_centroid(np.zeros(4096))


def test_reverb_dry_is_identity_and_ir_energy():
    x = sine(seconds=0.5)
    p = dsp.ReverbParams(0.3, 0.8, 0.0, seed=1)
    np.testing.assert_array_equal(dsp.apply_reverb(x, p), x)
    ir = dsp.impulse_response(dsp.ReverbParams(0.3, 0.8, 0.5, seed=1))
    assert ir[0] == 1.0
    assert np.sum(ir[1:] ** 2) == pytest.approx(1.0)


@pytest.mark.parametrize("kw", [dict(rt60_s=0.0, ir_length_s=1.0, wet_dry=0.2),
                                dict(rt60_s=0.5, ir_length_s=1.0, wet_dry=1.5),
                                dict(rt60_s=0.9, ir_length_s=0.5, wet_dry=0.2)])
def test_reverb_params_validation(kw):
    with pytest.raises(dsp.DSPError):
        dsp.ReverbParams(seed=0, **kw)


def test_reverb_peak_renormalized():
    x = np.ones(SR // 2) * 0.99
    y = dsp.apply_reverb(x, dsp.ReverbParams(0.5, 0.8, 1.0, seed=3))
    assert np.max(np.abs(y)) <= 1.0 + 1e-12


@given(st.floats(0.0, 50.0), st.integers(0, 2**31 - 1))
def test_noise_hits_requested_snr(snr_db, seed):
    x = sine(seconds=1.0, amp=0.3)
    y = dsp.add_uniform_noise(x, snr_db, seed)
    noise = y - x
    measured = 10 * np.log10(np.mean(x ** 2) / np.mean(noise ** 2))
    assert measured == pytest.approx(snr_db, abs=0.2)


def test_noise_inf_disables_and_zero_signal_raises():
    x = sine(seconds=0.1)
    np.testing.assert_array_equal(dsp.add_uniform_noise(x, float("inf")), x)
    with pytest.raises(dsp.DSPError):
        dsp.add_uniform_noise(np.zeros(10), 20.0)


def test_wav_roundtrip_is_exact_on_pcm_grid(tmp_path):
    x = quantize(sine(seconds=0.2, amp=0.7))
    write_wav(tmp_path / "a.wav", x)
    y, sr = read_wav(tmp_path / "a.wav")
    assert sr == SR
    np.testing.assert_array_equal(x, y)
