"""Reference-vs-decoded spectral quality measures.

Everything here is a pure function of two waveforms. Log-mel grids are
computed at several resolutions; the weighted L1 losses average each scale's
grid and then average across scales, so every scale counts equally no matter
how many frames and bins it has.
"""

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigurationError

__all__ = [
    "SpectralScale",
    "DEFAULT_SCALES",
    "STFT_SCALE",
    "LOG_FLOOR",
    "MEL_LOSS_WEIGHT",
    "TRANSIENT_RATIO",
    "TRANSIENT_HISTORY",
    "ENERGY_FLOOR",
    "SpectralReport",
    "hz_to_mel",
    "mel_to_hz",
    "mel_filterbank",
    "mel_centers",
    "stft_magnitude",
    "log_mel",
    "log_stft",
    "frame_energy",
    "detect_transients",
    "l1_from_grids",
    "transient_loss_from_grids",
    "energy_loss_from_grids",
    "mel_l1_distance",
    "mel_transient_loss",
    "mel_energy_loss",
    "perceptual_mel_loss",
    "spectral_distances",
    "spectral_report",
]

LOG_FLOOR = 1e-5
MEL_LOSS_WEIGHT = 20.0  # training weight of the combined mel loss, reported only

TRANSIENT_RATIO = 2.5
TRANSIENT_HISTORY = 8
ENERGY_FLOOR = 1e-8


@dataclass(frozen=True)
class SpectralScale:
    window: int
    hop: int
    n_mels: int
    sample_rate: int = 16000

    def __post_init__(self):
        if self.window < 1 or self.hop < 1 or self.hop > self.window:
            raise ConfigurationError(f"need 1 <= hop <= window, got hop={self.hop}, window={self.window}")
        if self.n_mels < 1:
            raise ConfigurationError("n_mels must be >= 1")

    def frames(self, samples):
        return samples // self.hop + 1


DEFAULT_SCALES = (
    SpectralScale(512, 128, 40),
    SpectralScale(1024, 256, 80),
    SpectralScale(2048, 512, 160),
)
STFT_SCALE = SpectralScale(2048, 512, 1)


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


@lru_cache(maxsize=32)
def _mel_filterbank(n_fft, n_mels, sample_rate):
    fft_freqs = np.linspace(0.0, sample_rate / 2, n_fft // 2 + 1)
    edges = mel_to_hz(np.linspace(0.0, hz_to_mel(sample_rate / 2), n_mels + 2))
    lower, center, upper = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (fft_freqs[None, :] - lower) / (center - lower)
    falling = (upper - fft_freqs[None, :]) / (upper - center)
    bank = np.maximum(0.0, np.minimum(rising, falling))
    bank.setflags(write=False)
    return bank


def mel_filterbank(n_fft, n_mels, sample_rate=16000):
    """Triangular HTK-mel filters, unit peak, ``(n_mels, n_fft // 2 + 1)``."""
    return _mel_filterbank(int(n_fft), int(n_mels), int(sample_rate))


def mel_centers(n_mels, sample_rate=16000):
    """Centre frequency (Hz) of each mel band."""
    return mel_to_hz(np.linspace(0.0, hz_to_mel(sample_rate / 2), n_mels + 2))[1:-1]


def _waveform(x):
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if x.size < 2:
        raise ConfigurationError("waveform needs at least 2 samples")
    return x


def _centered(x, window):
    return np.pad(x, window // 2, mode="reflect")


def stft_magnitude(x, scale):
    """|STFT| with a periodic Hann window, centred frames, reflection padding.

    Returns ``(frames, window // 2 + 1)`` with ``frames = samples // hop + 1``.
    """
    x = _waveform(x)
    padded = _centered(x, scale.window)
    frames = sliding_window_view(padded, scale.window)[:: scale.hop][: scale.frames(x.size)]
    hann = 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(scale.window) / scale.window)
    return np.abs(np.fft.rfft(frames * hann, axis=1))


def log_mel(x, scale):
    """Log-mel grid ``(frames, n_mels)`` floored at ``log(1e-5)``."""
    mel = stft_magnitude(x, scale) @ mel_filterbank(scale.window, scale.n_mels, scale.sample_rate).T
    return np.log(np.maximum(mel, LOG_FLOOR))


def log_stft(x, scale=STFT_SCALE):
    return np.log(np.maximum(stft_magnitude(x, scale), LOG_FLOOR))


def frame_energy(x, scale):
    """Energy of the hop-long segment centred on each analysis frame.

    Segments tile the (reflection padded) signal without overlap, so a
    single click lands in exactly one frame.
    """
    x = _waveform(x)
    padded = _centered(x, scale.window)
    n = scale.frames(x.size)
    starts = scale.window // 2 + np.arange(n) * scale.hop - scale.hop // 2
    sq = np.concatenate([[0.0], np.cumsum(padded**2)])
    lo = np.clip(starts, 0, padded.size)
    hi = np.clip(starts + scale.hop, 0, padded.size)
    return sq[hi] - sq[lo]


def detect_transients(x, scale, ratio=TRANSIENT_RATIO, history=TRANSIENT_HISTORY, floor=ENERGY_FLOOR):
    """Flag frames whose energy jumps above ``ratio`` x the recent median.

    Frame ``t`` is transient iff ``E[t] > ratio * max(median(E[t-history:t]), floor)``.
    The first ``history`` frames are never flagged.
    """
    energy = frame_energy(x, scale)
    flags = np.zeros(energy.size, dtype=bool)
    if energy.size > history:
        baseline = np.median(sliding_window_view(energy, history)[:-1], axis=1)
        flags[history:] = energy[history:] > ratio * np.maximum(baseline, floor)
    return flags


def _check_grids(ref, deg):
    if len(ref) != len(deg) or not ref:
        raise ConfigurationError("need matching, non-empty lists of per-scale grids")
    for a, b in zip(ref, deg):
        if np.shape(a) != np.shape(b):
            raise ConfigurationError(f"grid shapes differ: {np.shape(a)} vs {np.shape(b)}")


def l1_from_grids(ref, deg):
    """Scale-averaged mean absolute difference between log grids."""
    _check_grids(ref, deg)
    return float(np.mean([np.mean(np.abs(np.asarray(a) - np.asarray(b))) for a, b in zip(ref, deg)]))


def transient_loss_from_grids(ref, deg, flags):
    """Weighted L1 with weight 2 on transient frames (rows), 1 elsewhere."""
    _check_grids(ref, deg)
    per_scale = []
    for a, b, f in zip(ref, deg, flags):
        a, b = np.asarray(a), np.asarray(b)
        f = np.asarray(f, dtype=bool)
        if f.shape != (a.shape[0],):
            raise ConfigurationError(f"{f.shape[0]} transient flags for {a.shape[0]} frames")
        weight = np.where(f, 2.0, 1.0)[:, None]
        per_scale.append(np.mean(weight * np.abs(a - b)))
    return float(np.mean(per_scale))


def energy_loss_from_grids(ref, deg):
    """Weighted L1 with weight 2 where the degraded grid is louder."""
    _check_grids(ref, deg)
    per_scale = []
    for a, b in zip(ref, deg):
        a, b = np.asarray(a), np.asarray(b)
        weight = np.where(a < b, 2.0, 1.0)
        per_scale.append(np.mean(weight * np.abs(a - b)))
    return float(np.mean(per_scale))


def _pair(x, g):
    x, g = _waveform(x), _waveform(g)
    if x.shape != g.shape:
        raise ConfigurationError(f"reference has {x.size} samples, degraded has {g.size}")
    return x, g


def _grids(x, g, scales):
    return [log_mel(x, s) for s in scales], [log_mel(g, s) for s in scales]


def mel_l1_distance(x, g, scales=DEFAULT_SCALES):
    x, g = _pair(x, g)
    return l1_from_grids(*_grids(x, g, scales))


def mel_transient_loss(x, g, scales=DEFAULT_SCALES):
    x, g = _pair(x, g)
    ref, deg = _grids(x, g, scales)
    return transient_loss_from_grids(ref, deg, [detect_transients(x, s) for s in scales])


def mel_energy_loss(x, g, scales=DEFAULT_SCALES):
    x, g = _pair(x, g)
    return energy_loss_from_grids(*_grids(x, g, scales))


def perceptual_mel_loss(x, g, scales=DEFAULT_SCALES):
    """Transient loss, energy loss and their sum."""
    x, g = _pair(x, g)
    ref, deg = _grids(x, g, scales)
    transient = transient_loss_from_grids(ref, deg, [detect_transients(x, s) for s in scales])
    energy = energy_loss_from_grids(ref, deg)
    return {"transient": transient, "energy": energy, "total": transient + energy, "weight": MEL_LOSS_WEIGHT}


def spectral_distances(x, g, scales=DEFAULT_SCALES):
    x, g = _pair(x, g)
    return {
        "mel_distance": l1_from_grids(*_grids(x, g, scales)),
        "stft_distance": float(np.mean(np.abs(log_stft(x) - log_stft(g)))),
    }


@dataclass
class SpectralReport:
    """All grids, flags and values for one reference/degraded pair."""

    scales: tuple
    reference_grids: list
    degraded_grids: list
    transient_flags: list
    values: dict = field(default_factory=dict)

    def to_text(self):
        return "\n".join(f"{key}: {value:.6f}" for key, value in self.values.items())


def spectral_report(x, g, scales=DEFAULT_SCALES):
    x, g = _pair(x, g)
    ref, deg = _grids(x, g, scales)
    flags = [detect_transients(x, s) for s in scales]
    transient = transient_loss_from_grids(ref, deg, flags)
    energy = energy_loss_from_grids(ref, deg)
    values = {
        "mel_distance": l1_from_grids(ref, deg),
        "stft_distance": float(np.mean(np.abs(log_stft(x) - log_stft(g)))),
        "mel_transient_loss": transient,
        "mel_energy_loss": energy,
        "perceptual_mel_loss": transient + energy,
        "mel_loss_weight": MEL_LOSS_WEIGHT,
        "transient_frames": float(sum(int(f.sum()) for f in flags)),
    }
    return SpectralReport(tuple(scales), ref, deg, flags, values)
