"""16-bit PCM mono WAV reading and writing."""

import wave
from dataclasses import dataclass

import numpy as np

from .errors import AudioFormatError

SAMPLE_RATE = 16000


@dataclass(frozen=True)
class WavAudio:
    sample_rate: int
    samples: np.ndarray  # float32 in [-1, 1)

    @property
    def duration(self):
        return self.samples.size / self.sample_rate


def read_wav(path, sample_rate=SAMPLE_RATE):
    """Load a mono 16-bit PCM WAV at ``sample_rate`` as float32 samples."""
    try:
        with wave.open(str(path), "rb") as wf:
            channels, width, rate = wf.getnchannels(), wf.getsampwidth(), wf.getframerate()
            raw = wf.readframes(wf.getnframes())
    except (wave.Error, EOFError) as exc:
        raise AudioFormatError(f"{path}: not a readable PCM WAV file ({exc})") from exc
    if channels != 1:
        raise AudioFormatError(f"{path}: expected mono audio, got {channels} channels")
    if width != 2:
        raise AudioFormatError(f"{path}: expected 16-bit PCM, got {8 * width}-bit samples")
    if rate != sample_rate:
        raise AudioFormatError(f"{path}: expected {sample_rate} Hz, got {rate} Hz (no resampling)")
    pcm = np.frombuffer(raw, dtype="<i2")
    return WavAudio(rate, (pcm.astype(np.float32) / 32768.0))


def to_pcm16(samples):
    return np.clip(np.round(np.asarray(samples, dtype=np.float64) * 32768.0), -32768, 32767).astype("<i2")


def write_wav(path, samples, sample_rate=SAMPLE_RATE):
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(sample_rate)
        wf.writeframes(to_pcm16(samples).tobytes())
