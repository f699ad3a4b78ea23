"""Mel-spectrogram features, padding/resizing, normalization and the AQAF file format."""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, replace
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy import signal

MAGIC = b"AQAF"
FORMAT_VERSION = 1
LOG_EPS = 1e-10
TARGET_FRAMES = 418


class FeatureError(ValueError):
    pass


@dataclass(frozen=True)
class FeaturePreset:
    name: str
    sample_rate: int = 48000
    window: int = 512
    hop: int = 2048
    n_mels: int = 64
    fmin: float = 20.0
    fmax: float = 24000.0
    target_frames: int = TARGET_FRAMES


def _frames_for(duration_s: float, window: int, hop: int, sr: int) -> int:
    return (int(round(duration_s * sr)) - window) // hop + 1


PRESETS = {
    "clear2-long-stride": FeaturePreset("clear2-long-stride"),
    "clear2-short-stride": FeaturePreset(
        "clear2-short-stride", hop=512, target_frames=_frames_for(17.82, 512, 512, 48000)),
}


@dataclass
class Spectrogram:
    data: np.ndarray  # (n_mels, n_frames)
    valid_frames: int
    scene_id: str = ""

    @property
    def n_mels(self) -> int:
        return self.data.shape[0]

    @property
    def n_frames(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class NormStats:
    mean: float
    std: float
    computed_over: str = "train"

    def __post_init__(self):
        if not self.std > 0:
            raise FeatureError("normalization statistics have zero variance")

    def to_json(self) -> str:
        return json.dumps({"mean": self.mean, "std": self.std, "split": self.computed_over},
                          indent=1, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "NormStats":
        d = json.loads(text)
        return cls(d["mean"], d["std"], d["split"])


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


@lru_cache(maxsize=8)
def mel_filterbank(n_mels: int = 64, n_fft: int = 512, sample_rate: int = 48000,
                   fmin: float = 20.0, fmax: float = 24000.0) -> np.ndarray:
    """Triangular HTK-mel filters with unit peaks, shape (n_mels, n_fft // 2 + 1).

    Adjacent triangles cross at half height, so each FFT bin carries total weight <= 1.
    """
    bins = np.fft.rfftfreq(n_fft, 1.0 / sample_rate)
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (bins[None, :] - lo) / (mid - lo)
    falling = (hi - bins[None, :]) / (hi - mid)
    fb = np.maximum(0.0, np.minimum(rising, falling))
    # low bands can be narrower than one FFT bin; give those the nearest bin
    for k in np.flatnonzero(fb.sum(axis=1) == 0):
        fb[k, np.argmin(np.abs(bins - mid[k, 0]))] = 1.0
    return fb


def n_valid_frames(n_samples: int, window: int = 512, hop: int = 2048) -> int:
    return (n_samples - window) // hop + 1


def melspec(waveform: np.ndarray, sample_rate: int = 48000, window: int = 512,
            hop: int = 2048, n_mels: int = 64, scene_id: str = "",
            fmin: float = 20.0, fmax: float | None = None) -> Spectrogram:
    """Log-power Mel spectrogram; frames start every ``hop`` samples and must fit entirely."""
    x = np.asarray(waveform, dtype=np.float64)
    if len(x) < window:
        raise FeatureError(f"waveform of {len(x)} samples is shorter than the {window}-sample window")
    n_frames = n_valid_frames(len(x), window, hop)
    idx = np.arange(window)[None, :] + hop * np.arange(n_frames)[:, None]
    frames = x[idx] * signal.windows.hann(window, sym=False)
    power = np.abs(np.fft.rfft(frames, n=window, axis=1)) ** 2
    fb = mel_filterbank(n_mels, window, sample_rate, fmin, fmax or sample_rate / 2)
    mel = fb @ power.T
    return Spectrogram(np.log(mel + LOG_EPS), n_frames, scene_id)


def pad_to(spec: Spectrogram, target_frames: int = TARGET_FRAMES) -> Spectrogram:
    if spec.valid_frames > target_frames or spec.n_frames > target_frames:
        raise FeatureError(
            f"{spec.scene_id or 'spectrogram'}: {spec.valid_frames} frames exceed the "
            f"{target_frames}-frame budget")
    data = np.zeros((spec.n_mels, target_frames), dtype=spec.data.dtype)
    data[:, : spec.valid_frames] = spec.data[:, : spec.valid_frames]
    return replace(spec, data=data)


def resize_bilinear(spec: Spectrogram, target_frames: int = TARGET_FRAMES) -> Spectrogram:
    """Linear interpolation along time only (align-corners grid)."""
    valid = spec.data[:, : spec.valid_frames]
    if spec.valid_frames < 2:
        raise FeatureError("resizing needs at least two frames")
    if spec.valid_frames == target_frames:
        return replace(spec, data=valid.copy())
    src = np.linspace(0.0, spec.valid_frames - 1, target_frames)
    left = np.floor(src).astype(int)
    right = np.minimum(left + 1, spec.valid_frames - 1)
    frac = src - left
    data = valid[:, left] * (1 - frac) + valid[:, right] * frac
    return replace(spec, data=data, valid_frames=target_frames)


def fit_norm(specs, split: str = "train") -> NormStats:
    """Mean/std over valid frames; two passes in a fixed order for reproducibility."""
    specs = list(specs)
    total = sum(s.valid_frames * s.n_mels for s in specs)
    if total == 0:
        raise FeatureError("no frames to fit normalization statistics on")
    mean = sum(float(np.sum(s.data[:, : s.valid_frames], dtype=np.float64)) for s in specs) / total
    var = sum(float(np.sum((s.data[:, : s.valid_frames] - mean) ** 2, dtype=np.float64))
              for s in specs) / total
    return NormStats(mean, float(np.sqrt(var)), split)


def normalize(spec: Spectrogram, stats: NormStats, mask_padding: bool = True) -> Spectrogram:
    data = (spec.data - stats.mean) / stats.std
    if mask_padding:
        data[:, spec.valid_frames:] = 0.0
    return replace(spec, data=data)


def write_feature(path, spec: Spectrogram) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = MAGIC + struct.pack("<IIII", FORMAT_VERSION, spec.n_mels, spec.n_frames,
                                 spec.valid_frames)
    path.write_bytes(header + np.ascontiguousarray(spec.data, dtype="<f4").tobytes())


def read_feature(path, scene_id: str = "") -> Spectrogram:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise FeatureError(f"{path}: bad magic {raw[:4]!r}")
    version, n_mels, n_frames, valid = struct.unpack("<IIII", raw[4:20])
    if version != FORMAT_VERSION:
        raise FeatureError(f"{path}: unsupported feature version {version}")
    data = np.frombuffer(raw[20:], dtype="<f4").reshape(n_mels, n_frames).astype(np.float32)
    return Spectrogram(data, valid, scene_id or Path(path).stem)


def extract(waveform: np.ndarray, preset: FeaturePreset, mode: str = "pad",
            scene_id: str = "") -> Spectrogram:
    spec = melspec(waveform, preset.sample_rate, preset.window, preset.hop, preset.n_mels,
                   scene_id, preset.fmin, preset.fmax)
    if mode == "pad":
        return pad_to(spec, preset.target_frames)
    if mode == "resize":
        return resize_bilinear(spec, preset.target_frames)
    raise FeatureError(f"unknown mode {mode!r} (pad or resize)")
