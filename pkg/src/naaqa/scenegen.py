"""Acoustic scene composition and rendering."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import dsp
from .audio_io import quantize, write_wav
from .soundbank import SAMPLE_RATE, Bank

MIN_SOUNDS = 5
MAX_SOUNDS = 15
MAX_SCENE_S = 17.82
GLOBAL_POSITIONS = ("beginning", "middle", "end")


class SceneError(ValueError):
    pass


@dataclass(frozen=True)
class SceneParams:
    """Generation ranges; none of these are fixed by the source dataset description."""
    min_sounds: int = MIN_SOUNDS
    max_sounds: int = MAX_SOUNDS
    gap_range_s: tuple = (0.1, 0.5)
    max_total_s: float = MAX_SCENE_S
    rt60_range_s: tuple = (0.1, 0.6)
    wet_dry_range: tuple = (0.2, 0.5)
    snr_range_db: tuple = (20.0, 40.0)
    ir_length_s: float = 0.8


@dataclass
class SoundEvent:
    sound_id: str
    instrument: str
    note: str
    brightness_label: str
    loudness_label: str
    duration_s: float
    onset_s: float
    absolute_position: int
    global_position: str


@dataclass
class SceneSpec:
    scene_id: str
    split: str
    events: list
    silence_gaps_s: list
    reverb: dsp.ReverbParams | None
    noise_snr_db: float
    total_duration_s: float
    audio_path: str = ""
    seed: int | None = None

    def to_dict(self) -> dict:
        d = {
            "scene_id": self.scene_id, "split": self.split,
            "events": [asdict(e) for e in self.events],
            "silence_gaps_s": list(self.silence_gaps_s),
            "reverb": asdict(self.reverb) if self.reverb is not None else None,
            "noise_snr_db": None if np.isinf(self.noise_snr_db) else self.noise_snr_db,
            "total_duration_s": self.total_duration_s,
            "audio_path": self.audio_path, "seed": self.seed,
        }
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        reverb = dsp.ReverbParams(**d["reverb"]) if d.get("reverb") else None
        snr = d["noise_snr_db"]
        return cls(scene_id=d["scene_id"], split=d["split"],
                   events=[SoundEvent(**e) for e in d["events"]],
                   silence_gaps_s=list(d["silence_gaps_s"]), reverb=reverb,
                   noise_snr_db=float("inf") if snr is None else float(snr),
                   total_duration_s=d["total_duration_s"],
                   audio_path=d.get("audio_path", ""), seed=d.get("seed"))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "SceneSpec":
        return cls.from_dict(json.loads(text))


def global_bucket(onset_s: float, duration_scene_s: float) -> str:
    """Which third of the scene an onset falls in."""
    k = int(np.floor(3.0 * onset_s / duration_scene_s))
    return GLOBAL_POSITIONS[min(max(k, 0), 2)]


def _lay_out(durations: list, gaps: list) -> tuple:
    """Onsets for sounds separated by gaps (gaps[0] precedes the first sound)."""
    onsets, t = [], 0.0
    for dur, gap in zip(durations, gaps):
        t += gap
        onsets.append(t)
        t += dur
    return onsets, t + gaps[-1]


def _build_events(sounds: list, gaps: list) -> tuple:
    durations = [s.duration_s for s in sounds]
    onsets, total = _lay_out(durations, gaps)
    events = [SoundEvent(sound_id=s.id, instrument=s.instrument, note=s.note,
                         brightness_label=s.brightness_label, loudness_label=s.loudness_label,
                         duration_s=s.duration_s, onset_s=onset, absolute_position=k + 1,
                         global_position=global_bucket(onset, total))
              for k, (s, onset) in enumerate(zip(sounds, onsets))]
    return events, total


def compose_scene(bank: Bank, seed: int, scene_id: str | None = None,
                  params: SceneParams = SceneParams()) -> SceneSpec:
    if len(bank) == 0:
        raise SceneError("cannot compose a scene from an empty bank")
    rng = np.random.default_rng(seed)
    n = int(rng.integers(params.min_sounds, params.max_sounds + 1))
    picks = []
    for _ in range(n):
        k = int(rng.integers(len(bank)))
        while len(bank) > 1 and picks and k == picks[-1]:
            k = int(rng.integers(len(bank)))
        picks.append(k)
    sounds = [bank.sounds[k] for k in picks]
    gaps = rng.uniform(*params.gap_range_s, size=n + 1)
    sound_total = sum(s.duration_s for s in sounds)
    budget = params.max_total_s - sound_total
    if budget <= 0:
        raise SceneError("sound durations alone exceed the scene duration cap")
    if gaps.sum() > budget:
        gaps *= budget / gaps.sum()
    gaps = [float(g) for g in gaps]
    events, total = _build_events(sounds, gaps)
    if total > params.max_total_s:
        # guard against float round-up when the cap binds exactly
        gaps[-1] -= total - params.max_total_s
        events, total = _build_events(sounds, gaps)
    reverb = dsp.ReverbParams(rt60_s=float(rng.uniform(*params.rt60_range_s)),
                              ir_length_s=params.ir_length_s,
                              wet_dry=float(rng.uniform(*params.wet_dry_range)),
                              seed=int(rng.integers(2**31)))
    snr = float(rng.uniform(*params.snr_range_db))
    return SceneSpec(scene_id=scene_id or f"{bank.split}_{seed}", split=bank.split,
                     events=events, silence_gaps_s=gaps, reverb=reverb, noise_snr_db=snr,
                     total_duration_s=total, seed=int(seed))


def permute_scene(scene: SceneSpec, order) -> SceneSpec:
    """Same sounds and gap sequence, events reordered; positions recomputed."""
    evs = [scene.events[k] for k in order]
    durations = [e.duration_s for e in evs]
    onsets, total = _lay_out(durations, scene.silence_gaps_s)
    events = [replace(e, onset_s=o, absolute_position=k + 1, global_position=global_bucket(o, total))
              for k, (e, o) in enumerate(zip(evs, onsets))]
    return replace(scene, events=events, total_duration_s=total)


def n_samples(duration_s: float, sample_rate: int = SAMPLE_RATE) -> int:
    return int(round(duration_s * sample_rate))


def concatenate(spec: SceneSpec, bank: Bank) -> np.ndarray:
    """Dry scene: bank waveforms placed at their onsets, silence elsewhere."""
    out = np.zeros(n_samples(spec.total_duration_s))
    for e in spec.events:
        x = bank.get(e.sound_id).waveform
        start = n_samples(e.onset_s)
        out[start:start + len(x)] = x[: len(out) - start]
    return out


def render_scene(spec: SceneSpec, bank: Bank, out_path=None) -> np.ndarray:
    """Concatenate, reverberate, add noise; optionally write a 16-bit WAV."""
    for e in spec.events:
        bank.get(e.sound_id)
    x = concatenate(spec, bank)
    if spec.reverb is not None:
        x = dsp.apply_reverb(x, spec.reverb)
    if np.isfinite(spec.noise_snr_db):
        noise_seed = np.random.SeedSequence([spec.seed or 0, 7])
        x = dsp.add_uniform_noise(x, spec.noise_snr_db, np.random.default_rng(noise_seed))
        peak = np.max(np.abs(x))
        if peak > 1.0:
            x = x / peak
    x = quantize(x)
    if out_path is not None:
        write_wav(out_path, x)
    return x


def write_scene_index(scenes: list, out_dir, split: str) -> Path:
    out_dir = Path(out_dir)
    index = {"split": split,
             "scenes": [{"scene_id": s.scene_id, "spec": f"{s.scene_id}.json",
                         "audio": s.audio_path} for s in scenes]}
    path = out_dir / "index.json"
    path.write_text(json.dumps(index, indent=1, sort_keys=True) + "\n")
    return path


def load_scenes(scene_dir) -> list:
    scene_dir = Path(scene_dir)
    index = json.loads((scene_dir / "index.json").read_text())
    return [SceneSpec.from_json((scene_dir / row["spec"]).read_text()) for row in index["scenes"]]
