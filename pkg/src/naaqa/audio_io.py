"""16-bit PCM mono WAV read/write."""
from __future__ import annotations

from pathlib import Path

import numpy as np
from scipy.io import wavfile

PCM_SCALE = 32767.0


class AudioFormatError(ValueError):
    pass


def quantize(x: np.ndarray) -> np.ndarray:
    """Round a float signal onto the 16-bit PCM grid (still float64)."""
    return np.round(np.clip(x, -1.0, 1.0) * PCM_SCALE) / PCM_SCALE


def write_wav(path, waveform: np.ndarray, sample_rate: int = 48000) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    pcm = np.round(np.clip(waveform, -1.0, 1.0) * PCM_SCALE).astype("<i2")
    wavfile.write(path, sample_rate, pcm)


def read_wav(path) -> tuple[np.ndarray, int]:
    """Return (float64 mono waveform in [-1, 1], sample_rate)."""
    try:
        sr, data = wavfile.read(Path(path))
    except (ValueError, EOFError) as exc:
        raise AudioFormatError(f"{path}: not a readable WAV file ({exc})") from exc
    if data.ndim != 1:
        raise AudioFormatError(f"{path}: expected mono audio, got {data.shape[1]} channels")
    if data.dtype == np.int16:
        x = data.astype(np.float64) / PCM_SCALE
    elif data.dtype == np.int32:
        x = data.astype(np.float64) / 2147483647.0
    elif data.dtype == np.uint8:
        x = (data.astype(np.float64) - 128.0) / 127.0
    else:
        x = data.astype(np.float64)
    return x, int(sr)
