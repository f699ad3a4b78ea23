"""Elementary sound banks: additive synthesis, WAV ingestion and annotation."""
from __future__ import annotations

import csv
import hashlib
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import dsp
from .audio_io import quantize, read_wav, write_wav

GENERATOR_VERSION = "naaqa-bank-1"
SAMPLE_RATE = 48000
INSTRUMENTS = ("bass", "cello", "clarinet", "flute", "trumpet", "violin")
NOTES = ("A", "A#", "B", "C", "C#", "D", "D#", "E", "F", "F#", "G", "G#")
OCTAVES = (3, 4, 5)
BANK_SIZE = 135
MIN_DURATION_S = 0.69
MAX_DURATION_S = 1.11
PEAK = 0.9
SPLITS = ("train", "test")

_SEMITONE_FROM_C = {"C": 0, "C#": 1, "D": 2, "D#": 3, "E": 4, "F": 5,
                    "F#": 6, "G": 7, "G#": 8, "A": 9, "A#": 10, "B": 11}


class BankError(ValueError):
    pass


class EnvelopeError(BankError):
    pass


class IngestError(BankError):
    pass


@dataclass(frozen=True)
class Envelope:
    attack: float
    decay: float
    sustain: float
    release: float

    def __post_init__(self):
        if min(self.attack, self.decay, self.release) < 0:
            raise BankError("envelope durations must be non-negative")
        if not 0.0 <= self.sustain <= 1.0:
            raise BankError("sustain level must lie in [0, 1]")


@dataclass(frozen=True)
class Timbre:
    instrument_name: str
    harmonic_amplitudes: tuple
    envelope: Envelope
    vibrato_rate: float = 0.0
    vibrato_depth: float = 0.0  # cents

    def __post_init__(self):
        if self.instrument_name not in INSTRUMENTS:
            raise BankError(f"unknown instrument {self.instrument_name!r}")
        if not self.harmonic_amplitudes or self.harmonic_amplitudes[0] <= 0:
            raise BankError("the fundamental must have a positive amplitude")


TIMBRES = {
    "bass": Timbre("bass", (1.0, 0.55, 0.3, 0.18, 0.1, 0.06, 0.03),
                   Envelope(0.015, 0.25, 0.45, 0.12)),
    "cello": Timbre("cello", (1.0, 0.8, 0.62, 0.5, 0.36, 0.3, 0.22, 0.16, 0.11, 0.08),
                    Envelope(0.09, 0.15, 0.8, 0.15), 5.5, 14.0),
    "clarinet": Timbre("clarinet", (1.0, 0.04, 0.62, 0.03, 0.42, 0.02, 0.26, 0.02, 0.15, 0.01, 0.08),
                       Envelope(0.04, 0.1, 0.85, 0.1)),
    "flute": Timbre("flute", (1.0, 0.32, 0.1, 0.04, 0.015),
                    Envelope(0.06, 0.12, 0.8, 0.12), 5.0, 6.0),
    "trumpet": Timbre("trumpet", (1.0, 0.92, 0.86, 0.76, 0.66, 0.56, 0.46, 0.37, 0.29, 0.22, 0.16, 0.11),
                      Envelope(0.03, 0.08, 0.85, 0.1), 5.0, 5.0),
    "violin": Timbre("violin", tuple(1.0 / n for n in range(1, 16)),
                     Envelope(0.07, 0.12, 0.8, 0.14), 6.0, 18.0),
}


@dataclass
class ElementarySound:
    id: str
    instrument: str
    note: str
    octave: int
    waveform: np.ndarray = field(repr=False)
    sample_rate: int
    duration_s: float
    brightness_value: float
    brightness_label: str
    loudness_lufs: float
    loudness_label: str
    path: str = ""

    def manifest_row(self) -> dict:
        return {
            "id": self.id, "instrument": self.instrument, "note": self.note,
            "octave": self.octave, "path": self.path, "duration_s": self.duration_s,
            "brightness_value": self.brightness_value, "brightness_label": self.brightness_label,
            "loudness_lufs": self.loudness_lufs, "loudness_label": self.loudness_label,
        }


@dataclass
class Bank:
    split: str
    sounds: list
    brightness_threshold: float
    loudness_threshold: float
    master_seed: int | None = None
    manifest_path: str = ""

    def __post_init__(self):
        self._by_id = {s.id: s for s in self.sounds}

    def __len__(self):
        return len(self.sounds)

    def get(self, sound_id: str) -> ElementarySound:
        try:
            return self._by_id[sound_id]
        except KeyError:
            raise BankError(f"sound id {sound_id!r} not found in the {self.split} bank") from None

    @property
    def thresholds(self) -> dict:
        return {"brightness": self.brightness_threshold, "loudness": self.loudness_threshold}

    def manifest(self) -> dict:
        header = {"split": self.split, "thresholds": self.thresholds,
                  "master_seed": self.master_seed, "generator_version": GENERATOR_VERSION}
        return {"header": header, "sounds": [s.manifest_row() for s in self.sounds]}

    def save(self, out_dir) -> Path:
        """Write WAVs and manifest.json; returns the manifest path."""
        out_dir = Path(out_dir)
        for s in self.sounds:
            s.path = f"wav/{s.id}.wav"
            write_wav(out_dir / s.path, s.waveform, s.sample_rate)
        path = out_dir / "manifest.json"
        path.write_text(json.dumps(self.manifest(), indent=1, sort_keys=True) + "\n")
        self.manifest_path = str(path)
        return path


def note_to_frequency(note: str, octave: int) -> float:
    """Equal-tempered pitch with A4 = 440 Hz."""
    if note not in _SEMITONE_FROM_C:
        raise BankError(f"unknown note label {note!r}")
    if not 0 <= int(octave) <= 8:
        raise BankError(f"octave {octave} outside 0..8")
    semitone = 12 * int(octave) + _SEMITONE_FROM_C[note]
    return 440.0 * 2.0 ** ((semitone - 57) / 12.0)


def _envelope_curve(env: Envelope, n: int, sr: int) -> np.ndarray:
    t = np.arange(n) / sr
    dur = n / sr
    release_start = dur - env.release
    out = np.empty(n)
    a = t < env.attack
    out[a] = t[a] / env.attack if env.attack > 0 else 1.0
    d = (~a) & (t < env.attack + env.decay)
    out[d] = 1.0 - (1.0 - env.sustain) * (t[d] - env.attack) / max(env.decay, 1e-12)
    s = (~a) & (~d)
    out[s] = env.sustain
    r = t >= release_start
    level_at_release = np.interp(release_start, t, out) if release_start > 0 else out[0]
    out[r] = level_at_release * (dur - t[r]) / max(env.release, 1e-12)
    return np.clip(out, 0.0, 1.0)


def synth_note(timbre: Timbre, note: str, octave: int, duration_s: float,
               variation_seed: int, sample_rate: int = SAMPLE_RATE) -> np.ndarray:
    """Additive-synthesis rendition of one note, peak-normalized to 0.9.

    ``variation_seed`` perturbs detune (+-10 cents), per-harmonic gain (+-2 dB) and
    envelope timing (+-10 %), so different seeds give different "recordings".
    """
    if not MIN_DURATION_S - 1e-9 <= duration_s <= MAX_DURATION_S + 1e-9:
        raise BankError(f"duration {duration_s} s outside [{MIN_DURATION_S}, {MAX_DURATION_S}]")
    rng = np.random.default_rng(variation_seed)
    detune_cents = rng.uniform(-10.0, 10.0)
    n_h = len(timbre.harmonic_amplitudes)
    gains_db = rng.uniform(-2.0, 2.0, size=n_h)
    stretch = rng.uniform(0.9, 1.1, size=3)
    phases = rng.uniform(0, 2 * np.pi, size=n_h)
    phases[0] = 0.0
    env = timbre.envelope
    env = Envelope(env.attack * stretch[0], env.decay * stretch[1], env.sustain,
                   env.release * stretch[2])
    if env.attack + env.release > duration_s:
        raise EnvelopeError(
            f"duration {duration_s:.3f} s is shorter than attack+release "
            f"{env.attack + env.release:.3f} s")

    n = int(round(duration_s * sample_rate))
    t = np.arange(n) / sample_rate
    f0 = note_to_frequency(note, octave) * 2.0 ** (detune_cents / 1200.0)
    cents = timbre.vibrato_depth * np.sin(2 * np.pi * timbre.vibrato_rate * t)
    inst_freq = f0 * 2.0 ** (cents / 1200.0)
    phase = 2 * np.pi * np.cumsum(inst_freq) / sample_rate
    amps = np.asarray(timbre.harmonic_amplitudes) * 10 ** (gains_db / 20)
    x = np.zeros(n)
    for h in range(n_h):
        if (h + 1) * f0 * 1.01 >= sample_rate / 2:
            break
        x += amps[h] * np.sin((h + 1) * phase + phases[h])
    x *= _envelope_curve(env, n, sample_rate)
    return PEAK * x / np.max(np.abs(x))


def _select_combinations(master_seed: int) -> list:
    grid = [(i, n, o) for i in INSTRUMENTS for n in NOTES for o in OCTAVES]
    rng = np.random.default_rng(master_seed)
    order = rng.permutation(len(grid))
    chosen = [grid[k] for k in order[:BANK_SIZE]]
    spare = [grid[k] for k in order[BANK_SIZE:]]
    for axis, values in enumerate((INSTRUMENTS, NOTES, OCTAVES)):
        for value in values:
            if any(c[axis] == value for c in chosen):
                continue
            incoming = next(c for c in spare if c[axis] == value)
            # evict a combination whose attribute values all stay covered without it
            for j, c in enumerate(chosen):
                rest = chosen[:j] + chosen[j + 1:]
                if all(any(r[a] == c[a] for r in rest) for a in range(3)):
                    spare.remove(incoming)
                    spare.append(c)
                    chosen[j] = incoming
                    break
    return sorted(chosen, key=lambda c: (INSTRUMENTS.index(c[0]), c[2], NOTES.index(c[1])))


def _sound_seed(master_seed: int, split: str, combo_index: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([master_seed, SPLITS.index(split) + 1, combo_index])


def _render_entry(args) -> tuple:
    split, master_seed, k, (inst, note, octave) = args
    rng = np.random.default_rng(_sound_seed(master_seed, split, k))
    duration = float(rng.uniform(MIN_DURATION_S, MAX_DURATION_S))
    variation = int(rng.integers(2**31))
    level_db = float(rng.uniform(-18.0, 0.0))
    x = synth_note(TIMBRES[inst], note, octave, duration, variation)
    x = quantize(x * 10 ** (level_db / 20))
    return x, dsp.spectral_centroid(x), dsp.lufs_integrated(x)


def _label(value: float, threshold: float, above: str, below: str) -> str:
    return above if value > threshold else below


def _make_bank(split, entries, thresholds, master_seed=None) -> Bank:
    """entries: list of (id, instrument, note, octave, waveform, centroid, lufs)."""
    if thresholds is None:
        thresholds = {"brightness": float(np.median([e[5] for e in entries])),
                      "loudness": float(np.median([e[6] for e in entries]))}
    sounds = []
    for sid, inst, note, octave, x, centroid, lufs in entries:
        sounds.append(ElementarySound(
            id=sid, instrument=inst, note=note, octave=int(octave), waveform=x,
            sample_rate=SAMPLE_RATE, duration_s=len(x) / SAMPLE_RATE,
            brightness_value=float(centroid),
            brightness_label=_label(centroid, thresholds["brightness"], "bright", "dark"),
            loudness_lufs=float(lufs),
            loudness_label=_label(lufs, thresholds["loudness"], "loud", "quiet")))
    return Bank(split, sounds, thresholds["brightness"], thresholds["loudness"], master_seed)


def build_bank(split: str, master_seed: int, thresholds: dict | None = None,
               jobs: int = 1) -> Bank:
    """Synthesize a 135-sound bank.

    Thresholds default to the medians of the *train* bank for the same seed, so a test
    bank is always labelled with train-calibrated thresholds.
    """
    if split not in SPLITS:
        raise BankError(f"split must be one of {SPLITS}, got {split!r}")
    combos = _select_combinations(master_seed)
    tasks = [(split, master_seed, k, c) for k, c in enumerate(combos)]
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as pool:
            rendered = list(pool.map(_render_entry, tasks, chunksize=8))
    else:
        rendered = [_render_entry(t) for t in tasks]
    entries = []
    for k, ((inst, note, octave), (x, centroid, lufs)) in enumerate(zip(combos, rendered)):
        sid = f"{split}_{inst}_{note.replace('#', 's')}{octave}"
        entries.append((sid, inst, note, octave, x, centroid, lufs))
    if thresholds is None and split == "test":
        thresholds = build_bank("train", master_seed, jobs=jobs).thresholds
    return _make_bank(split, entries, thresholds, master_seed)


def _linear_resample(x: np.ndarray, sr_in: int, sr_out: int) -> np.ndarray:
    if sr_in == sr_out:
        return x
    n_out = int(round(len(x) * sr_out / sr_in))
    t_out = np.arange(n_out) * (sr_in / sr_out)
    return np.interp(t_out, np.arange(len(x)), x)


def _trim_silence(x: np.ndarray, floor_db: float = -60.0) -> np.ndarray:
    loud = np.flatnonzero(np.abs(x) > 10 ** (floor_db / 20))
    if loud.size == 0:
        return x[:0]
    return x[loud[0]: loud[-1] + 1]


def _read_metadata(path) -> dict:
    path = Path(path)
    if path.suffix.lower() == ".csv":
        with path.open(newline="") as fh:
            rows = list(csv.DictReader(fh))
    else:
        rows = json.loads(path.read_text())
    return {Path(r["file"]).name: r for r in rows}


def ingest_wav_dir(path, metadata_manifest, split: str = "train",
                   thresholds: dict | None = None) -> Bank:
    """Build a bank from real recordings.

    Every WAV must have a metadata row (file, instrument, note, octave). The whole
    directory is validated before anything is returned; nothing is written here.
    """
    wav_dir = Path(path)
    meta = _read_metadata(metadata_manifest)
    files = sorted(p for p in wav_dir.iterdir() if p.is_file())
    missing = [p.name for p in files if p.name not in meta]
    if missing:
        raise IngestError("no metadata row for: " + ", ".join(missing))
    entries = []
    for p in files:
        row = meta[p.name]
        if row["instrument"] not in INSTRUMENTS or row["note"] not in NOTES:
            raise IngestError(f"{p.name}: invalid instrument/note in metadata")
        x, sr = read_wav(p)
        x = quantize(_trim_silence(_linear_resample(x, sr, SAMPLE_RATE)))
        if len(x) == 0:
            raise IngestError(f"{p.name}: silent after trimming")
        sid = f"{split}_{p.stem}"
        entries.append((sid, row["instrument"], row["note"], int(row["octave"]), x,
                        dsp.spectral_centroid(x), dsp.lufs_integrated(x)))
    return _make_bank(split, entries, thresholds)


def load_bank(bank_dir) -> Bank:
    bank_dir = Path(bank_dir)
    manifest_path = bank_dir / "manifest.json"
    doc = json.loads(manifest_path.read_text())
    header = doc["header"]
    sounds = []
    for row in doc["sounds"]:
        x, sr = read_wav(bank_dir / row["path"])
        sounds.append(ElementarySound(waveform=x, sample_rate=sr, **row))
    return Bank(header["split"], sounds, header["thresholds"]["brightness"],
                header["thresholds"]["loudness"], header.get("master_seed"),
                str(manifest_path))


def waveform_digest(x: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(x, dtype="<f8").tobytes()).hexdigest()
