import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from naaqa import soundbank as sb
from naaqa.audio_io import write_wav


def test_a4_is_440_and_octaves_double():
    assert sb.note_to_frequency("A", 4) == pytest.approx(440.0)
    assert sb.note_to_frequency("C", 4) == pytest.approx(261.6256, abs=1e-3)
    assert sb.note_to_frequency("A", 5) == pytest.approx(2 * sb.note_to_frequency("A", 4))


@pytest.mark.parametrize("note,octave", [("H", 4), ("A", 9), ("C", -1)])
def test_bad_notes_raise(note, octave):
    with pytest.raises(sb.BankError):
        sb.note_to_frequency(note, octave)


@given(st.sampled_from(sb.INSTRUMENTS), st.sampled_from(sb.NOTES), st.sampled_from(sb.OCTAVES),
       st.floats(sb.MIN_DURATION_S, sb.MAX_DURATION_S), st.integers(0, 2**31 - 1))
def test_synth_note_length_and_peak(inst, note, octave, dur, seed):
    x = sb.synth_note(sb.TIMBRES[inst], note, octave, dur, seed)
    assert len(x) == int(round(dur * sb.SAMPLE_RATE))
    assert np.max(np.abs(x)) == pytest.approx(sb.PEAK)


def test_synth_note_rejects_out_of_range_duration():
    with pytest.raises(sb.BankError):
        sb.synth_note(sb.TIMBRES["flute"], "A", 4, 2.0, 0)


def test_bank_size_coverage_and_bounds(train_bank):
    assert len(train_bank) == sb.BANK_SIZE
    for axis, values in (("instrument", sb.INSTRUMENTS), ("note", sb.NOTES), ("octave", sb.OCTAVES)):
        assert {getattr(s, axis) for s in train_bank.sounds} == set(values)
    durs = [s.duration_s for s in train_bank.sounds]
    assert sb.MIN_DURATION_S - 1e-4 <= min(durs) and max(durs) <= sb.MAX_DURATION_S + 1e-4
    assert len({s.id for s in train_bank.sounds}) == len(train_bank)


def test_labels_split_at_median(train_bank):
    bright = sum(s.brightness_label == "bright" for s in train_bank.sounds)
    loud = sum(s.loudness_label == "loud" for s in train_bank.sounds)
    assert bright == loud == len(train_bank) // 2


def test_test_bank_uses_train_thresholds(train_bank):
    test_bank = sb.build_bank("test", 0)
    assert test_bank.thresholds == train_bank.thresholds
    assert {s.id.split("_", 1)[1] for s in test_bank.sounds} == \
        {s.id.split("_", 1)[1] for s in train_bank.sounds}
    a, b = train_bank.sounds[0].waveform, test_bank.sounds[0].waveform
    assert len(a) != len(b) or not np.array_equal(a, b)


def test_save_load_roundtrip(train_bank, tmp_path):
    path = train_bank.save(tmp_path / "bank")
    doc = json.loads(path.read_text())
    assert doc["header"]["thresholds"] == train_bank.thresholds
    loaded = sb.load_bank(tmp_path / "bank")
    assert [s.manifest_row() for s in loaded.sounds] == [s.manifest_row() for s in train_bank.sounds]
    np.testing.assert_array_equal(loaded.sounds[7].waveform, train_bank.sounds[7].waveform)
    with pytest.raises(sb.BankError):
        loaded.get("nope")


def test_unknown_split_raises():
    with pytest.raises(sb.BankError):
        sb.build_bank("val", 0)


def _recordings(tmp_path, names):
    wav = tmp_path / "wav"
    t = np.arange(48000) / 48000
    for k, n in enumerate(names):
        write_wav(wav / n, 0.5 * np.sin(2 * np.pi * (997 + 50 * k) * t))
    return wav


def test_ingest_recordings(tmp_path):
    wav = _recordings(tmp_path, ["a.wav", "b.wav"])
    meta = tmp_path / "meta.csv"
    meta.write_text("file,instrument,note,octave\na.wav,flute,A,4\nb.wav,cello,C,3\n")
    bank = sb.ingest_wav_dir(wav, meta)
    assert [s.instrument for s in bank.sounds] == ["flute", "cello"]
    assert bank.sounds[0].loudness_lufs == pytest.approx(-9.03, abs=0.1)


def test_ingest_missing_metadata_fails_whole_dir(tmp_path):
    wav = _recordings(tmp_path, ["a.wav", "b.wav"])
    meta = tmp_path / "meta.json"
    meta.write_text(json.dumps([{"file": "a.wav", "instrument": "flute", "note": "A", "octave": 4}]))
    with pytest.raises(sb.IngestError, match="b.wav"):
        sb.ingest_wav_dir(wav, meta)
