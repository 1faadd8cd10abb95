"""MFCC front-end: framing, mel filterbank, log energies, DCT.

A 1-second clip at 8 kHz becomes a 40 x 101 coefficient matrix: 101 frames
of 30 ms with a 10 ms hop (reflect-padded so the frame count comes out at
101), a 40-band triangular mel filterbank between 20 and 4000 Hz on a
256-point power spectrum, log with a 1e-10 floor, and an orthonormal DCT-II
over the 40 log energies. All 40 coefficients are kept. The band-ablation
hook zeroes one mel band's log energy (down to the silence floor) before
the DCT.
"""

from __future__ import annotations

import hashlib
import os
import struct
from pathlib import Path
from dataclasses import dataclass

import numpy as np
import scipy.fft

from .audio import AudioClip
from .errors import BadBandIndex, CorruptCheckpoint, WrongLength

SAMPLE_RATE = 8000
CLIP_SAMPLES = 8000
FRAME_LEN = 240       # 30 ms
HOP = 80              # 10 ms
EDGE_PAD = 120        # reflect padding per side; yields exactly 101 frames
N_FRAMES = 101
N_FFT = 256
N_BINS = N_FFT // 2 + 1
N_MELS = 40
FMIN_HZ = 20.0
FMAX_HZ = 4000.0
LOG_FLOOR = 1e-10

_WINDOW = np.hanning(FRAME_LEN)

CACHE_MAGIC = b"MFCC0001"
CACHE_ENV_VAR = "CRYB_CACHE"


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


@dataclass(frozen=True)
class MelFilterbank:
    """Triangular mel filters sampled at FFT bin centers.

    weights is (40, 129); each row is nonnegative, peak-normalized to 1.0.
    band_edges holds the 42 edge frequencies in Hz, equally spaced on the
    mel scale between 20 and 4000 Hz.
    """

    weights: np.ndarray
    band_edges: np.ndarray

    def center_hz(self, band: int) -> float:
        """Center frequency of a band: the middle edge of its triangle."""
        if not 0 <= band < N_MELS:
            raise BadBandIndex(f"band {band} outside 0..{N_MELS - 1}")
        return float(self.band_edges[band + 1])


def build_mel_filterbank() -> MelFilterbank:
    edges = mel_to_hz(np.linspace(hz_to_mel(FMIN_HZ), hz_to_mel(FMAX_HZ), N_MELS + 2))
    bin_hz = np.arange(N_BINS) * (SAMPLE_RATE / N_FFT)
    weights = np.zeros((N_MELS, N_BINS), dtype=np.float64)
    for i in range(N_MELS):
        lo, center, hi = edges[i], edges[i + 1], edges[i + 2]
        rising = (bin_hz - lo) / (center - lo)
        falling = (hi - bin_hz) / (hi - center)
        tri = np.maximum(0.0, np.minimum(rising, falling))
        peak = tri.max()
        if peak <= 0.0:
            raise AssertionError(f"mel filter {i} has empty support")
        weights[i] = tri / peak
    return MelFilterbank(weights=weights, band_edges=edges)


@dataclass(frozen=True)
class MfccMatrix:
    """40 x 101 coefficient matrix (coefficient index x frame index)."""

    coeffs: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coeffs)
        if c.shape != (N_MELS, N_FRAMES):
            raise WrongLength(f"expected (40, 101) coefficients, got {c.shape}")
        if not np.all(np.isfinite(c)):
            raise ValueError("MFCC matrix contains non-finite values")


def frame_signal(clip: AudioClip) -> np.ndarray:
    """Split a 1 s clip into 101 Hann-windowed frames of 240 samples.

    The signal is reflect-padded by 120 samples per side; frame k starts at
    index 80*k in the padded signal.
    """
    if clip.sample_rate != SAMPLE_RATE or len(clip) != CLIP_SAMPLES:
        raise WrongLength(
            f"expected {CLIP_SAMPLES} samples at {SAMPLE_RATE} Hz, "
            f"got {len(clip)} at {clip.sample_rate} Hz")
    padded = np.pad(clip.samples.astype(np.float64), EDGE_PAD, mode="reflect")
    starts = np.arange(N_FRAMES) * HOP
    frames = padded[starts[:, None] + np.arange(FRAME_LEN)]
    return frames * _WINDOW


def log_mel_energies(clip: AudioClip,
                     bank: MelFilterbank | None = None) -> np.ndarray:
    """(101, 40) log mel energies: the pre-DCT stage of the pipeline."""
    if bank is None:
        bank = default_filterbank()
    frames = frame_signal(clip)
    spectrum = np.fft.rfft(frames, n=N_FFT, axis=1)
    power = spectrum.real ** 2 + spectrum.imag ** 2
    energies = power @ bank.weights.T
    return np.log(energies + LOG_FLOOR)


def dct_coefficients(log_energies: np.ndarray) -> np.ndarray:
    """Orthonormal DCT-II across the mel axis, stacked to (40, n_frames)."""
    return scipy.fft.dct(log_energies, type=2, norm="ortho", axis=1).T


def mfcc(clip: AudioClip, bank: MelFilterbank | None = None) -> MfccMatrix:
    return MfccMatrix(dct_coefficients(log_mel_energies(clip, bank)))


def ablate_band(clip: AudioClip, band_index: int,
                bank: MelFilterbank | None = None) -> MfccMatrix:
    """MFCC with one mel band's log energy forced to the silence floor."""
    if not isinstance(band_index, (int, np.integer)) or not 0 <= band_index < N_MELS:
        raise BadBandIndex(f"band index {band_index} outside 0..{N_MELS - 1}")
    log_e = log_mel_energies(clip, bank)
    log_e[:, band_index] = np.log(LOG_FLOOR)
    return MfccMatrix(dct_coefficients(log_e))


# -- optional binary cache ---------------------------------------------------

def write_cache(path, matrix: MfccMatrix) -> None:
    """Little-endian float32 dump: magic, two uint32 dims, row-major data."""
    c = np.ascontiguousarray(matrix.coeffs, dtype="<f4")
    with open(path, "wb") as f:
        f.write(CACHE_MAGIC)
        f.write(struct.pack("<II", c.shape[0], c.shape[1]))
        f.write(c.tobytes())


def read_cache(path) -> MfccMatrix:
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < 16 or blob[:8] != CACHE_MAGIC:
        raise CorruptCheckpoint(f"{path}: bad MFCC cache header")
    rows, cols = struct.unpack("<II", blob[8:16])
    data = np.frombuffer(blob[16:], dtype="<f4")
    if data.size != rows * cols:
        raise CorruptCheckpoint(f"{path}: cache payload size mismatch")
    return MfccMatrix(data.reshape(rows, cols).astype(np.float64))


def cache_dir_from_env() -> str | None:
    d = os.environ.get(CACHE_ENV_VAR)
    return d if d else None


_DEFAULT_BANK: MelFilterbank | None = None


def default_filterbank() -> MelFilterbank:
    """Shared filterbank instance (construction is pure, so one suffices)."""
    global _DEFAULT_BANK
    if _DEFAULT_BANK is None:
        _DEFAULT_BANK = build_mel_filterbank()
    return _DEFAULT_BANK


def mfcc_for_file(path, bank: MelFilterbank | None = None,
                  cache_dir=None) -> MfccMatrix:
    """MFCC of a stored clip, optionally via the binary cache.

    Values are quantized to float32 either way, so runs with and without a
    cache directory see identical features.
    """
    from .audio import read_wav  # local import; audio does not need features

    if cache_dir is None:
        cache_dir = cache_dir_from_env()
    cache_path = None
    if cache_dir:
        key = hashlib.sha256(str(Path(path).resolve()).encode("utf-8")).hexdigest()
        cache_path = Path(cache_dir) / f"{key[:32]}.mfcc"
        if cache_path.exists():
            return read_cache(cache_path)
    matrix = mfcc(read_wav(path), bank or default_filterbank())
    quantized = MfccMatrix(
        matrix.coeffs.astype("<f4").astype(np.float64))
    if cache_path is not None:
        Path(cache_dir).mkdir(parents=True, exist_ok=True)
        write_cache(cache_path, quantized)
    return quantized
