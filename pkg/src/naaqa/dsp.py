"""Signal-level primitives: loudness metering, brightness, reverb and noise."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import signal

SAMPLE_RATE = 48000

# ITU-R BS.1770-4 K-weighting at 48 kHz: (b0, b1, b2), (1, a1, a2)
_SHELF_48K = (
    (1.53512485958697, -2.69169618940638, 1.19839281085285),
    (1.0, -1.69065929318241, 0.73248077421585),
)
_HIGHPASS_48K = (
    (1.0, -2.0, 1.0),
    (1.0, -1.99004745483398, 0.99007225036621),
)

# analog prototype parameters the 48 kHz table was derived from
_SHELF_F0 = 1681.974450955533
_SHELF_GAIN_DB = 3.999843853973347
_SHELF_Q = 0.7071752369554196
_HP_F0 = 38.13547087602444
_HP_Q = 0.5003270373238773

ABSOLUTE_GATE_LUFS = -70.0
RELATIVE_GATE_LU = -10.0
BLOCK_S = 0.400
BLOCK_OVERLAP = 0.75


class DSPError(ValueError):
    """Raised when a signal cannot be processed (too short, silent, bad params)."""


@dataclass(frozen=True)
class KWeightingFilter:
    stage1: tuple  # high shelf ((b0, b1, b2), (1, a1, a2))
    stage2: tuple  # high pass

    @classmethod
    def for_rate(cls, sample_rate: int) -> "KWeightingFilter":
        if sample_rate == 48000:
            return cls(_SHELF_48K, _HIGHPASS_48K)
        return cls(_shelf_coefficients(sample_rate), _highpass_coefficients(sample_rate))

    def apply(self, x: np.ndarray) -> np.ndarray:
        y = signal.lfilter(self.stage1[0], self.stage1[1], x)
        return signal.lfilter(self.stage2[0], self.stage2[1], y)

    def response_db(self, freq_hz: float, sample_rate: int = SAMPLE_RATE) -> float:
        """Magnitude response of the cascade at one frequency, in dB."""
        w = 2 * np.pi * freq_hz / sample_rate
        _, h1 = signal.freqz(self.stage1[0], self.stage1[1], worN=[w])
        _, h2 = signal.freqz(self.stage2[0], self.stage2[1], worN=[w])
        return float(20 * np.log10(np.abs(h1[0] * h2[0])))


def _shelf_coefficients(fs: int) -> tuple:
    k = np.tan(np.pi * _SHELF_F0 / fs)
    vh = 10 ** (_SHELF_GAIN_DB / 20)
    vb = vh ** 0.4996667741545416
    a0 = 1 + k / _SHELF_Q + k * k
    b = ((vh + vb * k / _SHELF_Q + k * k) / a0,
         2 * (k * k - vh) / a0,
         (vh - vb * k / _SHELF_Q + k * k) / a0)
    a = (1.0, 2 * (k * k - 1) / a0, (1 - k / _SHELF_Q + k * k) / a0)
    return b, a


def _highpass_coefficients(fs: int) -> tuple:
    k = np.tan(np.pi * _HP_F0 / fs)
    a0 = 1 + k / _HP_Q + k * k
    a = (1.0, 2 * (k * k - 1) / a0, (1 - k / _HP_Q + k * k) / a0)
    return (1.0, -2.0, 1.0), a


def lufs_integrated(waveform: np.ndarray, sample_rate: int = SAMPLE_RATE) -> float:
    """Integrated loudness of a mono signal (BS.1770-4 gating).

    Returns ``-inf`` when no block survives the absolute gate.
    """
    x = np.asarray(waveform, dtype=np.float64)
    block = int(round(BLOCK_S * sample_rate))
    hop = int(round(BLOCK_S * (1 - BLOCK_OVERLAP) * sample_rate))
    if x.ndim != 1:
        raise DSPError("lufs_integrated expects a mono waveform")
    if len(x) < block:
        raise DSPError(
            f"waveform of {len(x)} samples is shorter than one {BLOCK_S * 1000:.0f} ms block")
    y = KWeightingFilter.for_rate(sample_rate).apply(x)
    n_blocks = (len(y) - block) // hop + 1
    csum = np.concatenate([[0.0], np.cumsum(y * y)])
    starts = np.arange(n_blocks) * hop
    z = (csum[starts + block] - csum[starts]) / block
    with np.errstate(divide="ignore"):
        l_blocks = -0.691 + 10 * np.log10(z)
    above_abs = l_blocks > ABSOLUTE_GATE_LUFS
    if not above_abs.any():
        return float("-inf")
    gamma_r = -0.691 + 10 * np.log10(z[above_abs].mean()) + RELATIVE_GATE_LU
    gated = above_abs & (l_blocks > gamma_r)
    return float(-0.691 + 10 * np.log10(z[gated].mean()))


def spectral_centroid(waveform: np.ndarray, sample_rate: int = SAMPLE_RATE,
                      n_fft: int = 2048, hop: int = 1024) -> float:
    """Mean magnitude-weighted spectral centroid (Hz), used as the brightness value."""
    x = np.asarray(waveform, dtype=np.float64)
    if x.size == 0 or not np.any(x):
        raise DSPError("spectral centroid is undefined for a silent waveform")
    if len(x) < n_fft:
        x = np.pad(x, (0, n_fft - len(x)))
    n_frames = (len(x) - n_fft) // hop + 1
    idx = np.arange(n_fft)[None, :] + hop * np.arange(n_frames)[:, None]
    frames = x[idx] * signal.windows.hann(n_fft, sym=False)
    mag = np.abs(np.fft.rfft(frames, axis=1))
    freqs = np.fft.rfftfreq(n_fft, 1.0 / sample_rate)
    total = mag.sum(axis=1)
    voiced = total > 0
    centroids = (mag[voiced] @ freqs) / total[voiced]
    return float(centroids.mean())


@dataclass(frozen=True)
class ReverbParams:
    rt60_s: float
    ir_length_s: float
    wet_dry: float
    seed: int

    def __post_init__(self):
        if not self.rt60_s > 0:
            raise DSPError(f"rt60_s must be positive, got {self.rt60_s}")
        if not 0.0 <= self.wet_dry <= 1.0:
            raise DSPError(f"wet_dry must lie in [0, 1], got {self.wet_dry}")
        if self.ir_length_s < self.rt60_s:
            raise DSPError("impulse response must be at least rt60_s long")


def impulse_response(params: ReverbParams, sample_rate: int = SAMPLE_RATE) -> np.ndarray:
    """Unit impulse followed by an exponentially decaying Gaussian noise tail.

    The tail is scaled to carry the same energy as the direct path.
    """
    n = int(round(params.ir_length_s * sample_rate))
    rng = np.random.default_rng(params.seed)
    t = np.arange(1, n) / sample_rate
    decay = np.log(1000.0) / params.rt60_s
    tail = rng.standard_normal(n - 1) * np.exp(-decay * t)
    tail /= np.sqrt(np.sum(tail * tail))
    return np.concatenate([[1.0], tail])


def apply_reverb(waveform: np.ndarray, params: ReverbParams,
                 sample_rate: int = SAMPLE_RATE, renormalize: bool = True) -> np.ndarray:
    x = np.asarray(waveform, dtype=np.float64)
    if params.wet_dry == 0.0:
        return x.copy()
    wet = signal.fftconvolve(x, impulse_response(params, sample_rate))[: len(x)]
    out = (1.0 - params.wet_dry) * x + params.wet_dry * wet
    peak = np.max(np.abs(out)) if out.size else 0.0
    if renormalize and peak > 1.0:
        out = out / peak
    return out


def add_uniform_noise(waveform: np.ndarray, snr_db: float,
                      rng: np.random.Generator | int | None = None) -> np.ndarray:
    """Add zero-mean uniform white noise at the requested SNR (dB).

    ``snr_db = inf`` disables the noise.
    """
    x = np.asarray(waveform, dtype=np.float64)
    if np.isinf(snr_db) and snr_db > 0:
        return x.copy()
    if not np.isfinite(snr_db):
        raise DSPError(f"snr_db must be finite or +inf, got {snr_db}")
    p_signal = np.mean(x * x)
    if p_signal == 0:
        raise DSPError("SNR is undefined for an all-zero signal")
    p_noise = p_signal / 10 ** (snr_db / 10)
    a = np.sqrt(3.0 * p_noise)
    rng = np.random.default_rng(rng)
    return x + rng.uniform(-a, a, size=x.shape)
