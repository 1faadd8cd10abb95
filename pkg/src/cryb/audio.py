"""WAV ingestion, downsampling to the pipeline rate, and length fitting.

All classification work happens on mono clips at 8 kHz; this module gets
arbitrary 16-bit PCM recordings into that form.
"""

from __future__ import annotations

import wave
from dataclasses import dataclass

import numpy as np

from .errors import MalformedWav, UnsupportedEncoding, UpsamplingRequested

PIPELINE_RATE = 8000
INGEST_RATES = (8000, 16000, 44100, 48000)

_RESAMPLE_TAPS = 64
_RESAMPLE_CUTOFF = 0.45  # fraction of the target rate


@dataclass
class AudioClip:
    """Mono waveform: float samples in [-1, 1] plus a sample rate in Hz."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float32)
        if self.samples.ndim != 1:
            raise ValueError(f"expected mono 1-D samples, got shape {self.samples.shape}")
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate

    def validate(self) -> "AudioClip":
        """Check the ingest invariants: finite samples within [-1, 1]."""
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("clip contains non-finite samples")
        peak = float(np.max(np.abs(self.samples))) if len(self.samples) else 0.0
        if peak > 1.0:
            raise ValueError(f"clip peak {peak} exceeds 1.0")
        return self


def read_wav(path) -> AudioClip:
    """Read a RIFF/WAVE file of 16-bit PCM, averaging stereo to mono.

    Integer samples map to [-1, 1] by division by 32768, so -32768 becomes
    exactly -1.0.
    """
    try:
        with wave.open(str(path), "rb") as w:
            n_channels = w.getnchannels()
            samp_width = w.getsampwidth()
            rate = w.getframerate()
            n_frames = w.getnframes()
            comp_type = w.getcomptype()
            raw = w.readframes(n_frames)
    except wave.Error as exc:
        msg = str(exc)
        if "unknown format" in msg or "compression" in msg.lower():
            raise UnsupportedEncoding(f"{path}: {msg}") from exc
        raise MalformedWav(f"{path}: {msg}") from exc
    except EOFError as exc:
        raise MalformedWav(f"{path}: truncated header") from exc

    if comp_type != "NONE":
        raise UnsupportedEncoding(f"{path}: compressed WAV ({comp_type}) not supported")
    if samp_width != 2:
        raise UnsupportedEncoding(f"{path}: expected 16-bit PCM, got {8 * samp_width}-bit")
    if n_channels not in (1, 2):
        raise UnsupportedEncoding(f"{path}: expected 1 or 2 channels, got {n_channels}")
    if len(raw) < n_frames * n_channels * 2:
        raise MalformedWav(f"{path}: data chunk truncated "
                           f"({len(raw)} bytes for {n_frames} frames)")

    ints = np.frombuffer(raw, dtype="<i2")
    x = ints.astype(np.float32) / 32768.0
    if n_channels == 2:
        x = x.reshape(-1, 2).mean(axis=1)
    return AudioClip(x, rate)


def write_wav(path, clip: AudioClip) -> None:
    """Write a mono 16-bit PCM WAV; inverse of read_wav on the int16 grid."""
    q = np.clip(np.round(clip.samples.astype(np.float64) * 32768.0), -32768, 32767)
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(clip.sample_rate)
        w.writeframes(q.astype("<i2").tobytes())


def _lowpass_taps(cutoff_hz: float, rate: int, n_taps: int = _RESAMPLE_TAPS) -> np.ndarray:
    """Hann-windowed sinc low-pass, normalized to unity DC gain."""
    m = np.arange(n_taps) - (n_taps - 1) / 2.0
    h = (2.0 * cutoff_hz / rate) * np.sinc(2.0 * cutoff_hz / rate * m)
    h *= np.hanning(n_taps)
    return h / h.sum()


def resample(clip: AudioClip, target_rate: int) -> AudioClip:
    """Downsample by low-pass filtering then rational-ratio interpolation.

    The anti-aliasing filter is a 64-tap Hann-windowed sinc with cutoff at
    0.45 x target_rate; output sample n is read from the filtered signal at
    source position n * source/target (linear interpolation between source
    samples, offset by the filter's group delay).
    """
    if target_rate > clip.sample_rate:
        raise UpsamplingRequested(
            f"cannot resample {clip.sample_rate} Hz up to {target_rate} Hz")
    if target_rate == clip.sample_rate:
        return AudioClip(clip.samples.copy(), target_rate)

    x = clip.samples.astype(np.float64)
    h = _lowpass_taps(_RESAMPLE_CUTOFF * target_rate, clip.sample_rate)
    filtered = np.convolve(x, h, mode="full")

    out_len = round(len(x) * target_rate / clip.sample_rate)
    delay = (len(h) - 1) / 2.0
    pos = delay + np.arange(out_len) * (clip.sample_rate / target_rate)
    idx = np.minimum(pos.astype(np.int64), len(filtered) - 2)
    frac = pos - idx
    y = filtered[idx] * (1.0 - frac) + filtered[idx + 1] * frac
    return AudioClip(y.astype(np.float32), target_rate)


def fit_length(clip: AudioClip, duration_s: float) -> AudioClip:
    """Zero-pad or truncate at the end to exactly round(duration * rate) samples."""
    n = round(duration_s * clip.sample_rate)
    x = clip.samples
    if len(x) == n:
        return AudioClip(x.copy(), clip.sample_rate)
    if len(x) > n:
        return AudioClip(x[:n].copy(), clip.sample_rate)
    out = np.zeros(n, dtype=np.float32)
    out[: len(x)] = x
    return AudioClip(out, clip.sample_rate)
