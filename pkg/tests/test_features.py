"""MFCC front end checked against a naive direct-DFT reference.

The reference below recomputes every stage from the definitions: explicit
complex-exponential DFT sums, mel filters rebuilt from the mel formula,
and an explicit orthonormal cosine-transform matrix. It shares no code
with the pipeline beyond numpy.
"""

import os

import numpy as np
import pytest

from cryb.audio import AudioClip
from cryb.errors import BadBandIndex, CorruptCheckpoint, WrongLength
from cryb.features import (CACHE_ENV_VAR, EDGE_PAD, FMAX_HZ, FMIN_HZ,
                           FRAME_LEN, HOP, LOG_FLOOR, N_BINS, N_FFT, N_FRAMES,
                           N_MELS, SAMPLE_RATE, MelFilterbank, ablate_band,
                           build_mel_filterbank, default_filterbank,
                           frame_signal, mfcc, mfcc_for_file, read_cache,
                           write_cache)

# -- reference implementation -------------------------------------------------


def ref_mel(f):
    return 2595.0 * np.log10(1.0 + f / 700.0)


def ref_mel_inv(m):
    return 700.0 * (10.0 ** (m / 2595.0) - 1.0)


def ref_filterbank():
    edges_mel = np.linspace(ref_mel(FMIN_HZ), ref_mel(FMAX_HZ), N_MELS + 2)
    edges_hz = ref_mel_inv(edges_mel)
    freqs = np.arange(N_BINS) * SAMPLE_RATE / N_FFT
    weights = np.zeros((N_MELS, N_BINS))
    for b in range(N_MELS):
        lo, mid, hi = edges_hz[b], edges_hz[b + 1], edges_hz[b + 2]
        for k, f in enumerate(freqs):
            if lo <= f <= mid and mid > lo:
                weights[b, k] = (f - lo) / (mid - lo)
            elif mid < f <= hi and hi > mid:
                weights[b, k] = (hi - f) / (hi - mid)
        peak = weights[b].max()
        if peak > 0:
            weights[b] /= peak
    return weights


def ref_mfcc(samples):
    """Direct-sum DFT MFCC: O(frames * N * bins), no FFT anywhere."""
    x = np.pad(samples.astype(np.float64), EDGE_PAD, mode="reflect")
    window = np.hanning(FRAME_LEN)
    k = np.arange(N_BINS)
    n = np.arange(N_FFT)
    basis = np.exp(-2j * np.pi * np.outer(k, n) / N_FFT)  # (129, 256)
    frames = []
    for i in range(N_FRAMES):
        frame = x[i * HOP:i * HOP + FRAME_LEN] * window
        padded = np.concatenate([frame, np.zeros(N_FFT - FRAME_LEN)])
        spec = basis @ padded
        frames.append(np.abs(spec) ** 2)
    power = np.array(frames)                       # (101, 129)
    mel_e = power @ ref_filterbank().T             # (101, 40)
    log_e = np.log(mel_e + LOG_FLOOR)
    # orthonormal DCT-II matrix, explicit cosine sums
    j = np.arange(N_MELS)
    dct = np.cos(np.pi * np.outer(j, 2 * np.arange(N_MELS) + 1) / (2 * N_MELS))
    dct *= np.sqrt(2.0 / N_MELS)
    dct[0] /= np.sqrt(2.0)
    return (log_e @ dct.T).T                       # (40, 101)


def _random_clip(rng, kind="noise"):
    if kind == "noise":
        samples = rng.normal(0, 0.2, SAMPLE_RATE)
    else:
        t = np.arange(SAMPLE_RATE) / SAMPLE_RATE
        f0 = rng.uniform(150, 900)
        samples = 0.5 * np.sin(2 * np.pi * f0 * t) * rng.uniform(0.2, 1.0)
    return AudioClip(np.clip(samples, -1, 1).astype(np.float32), SAMPLE_RATE)


# -- tests ---------------------------------------------------------------


def test_mfcc_matches_direct_dft_reference(rng):
    for trial in range(4):
        clip = _random_clip(rng, "noise" if trial % 2 else "tone")
        got = mfcc(clip).coeffs
        want = ref_mfcc(clip.samples)
        assert got.shape == (40, 101)
        assert np.max(np.abs(got - want)) < 1e-4


def test_mfcc_shape_and_finiteness(rng):
    clip = _random_clip(rng)
    mat = mfcc(clip)
    assert mat.coeffs.shape == (N_MELS, N_FRAMES)
    assert np.all(np.isfinite(mat.coeffs))


def test_mfcc_rejects_wrong_length():
    clip = AudioClip(np.zeros(4000, dtype=np.float32), SAMPLE_RATE)
    with pytest.raises(WrongLength):
        mfcc(clip)


def test_frame_layout_uses_reflect_padding(rng):
    samples = rng.normal(0, 0.3, SAMPLE_RATE).astype(np.float32)
    frames = frame_signal(AudioClip(samples, SAMPLE_RATE))
    assert frames.shape == (N_FRAMES, FRAME_LEN)
    padded = np.pad(samples.astype(np.float64), EDGE_PAD, mode="reflect")
    window = np.hanning(FRAME_LEN)
    np.testing.assert_array_equal(frames[0], padded[:FRAME_LEN] * window)
    np.testing.assert_array_equal(
        frames[50], padded[50 * HOP:50 * HOP + FRAME_LEN] * window)
    np.testing.assert_array_equal(frames[100], padded[-FRAME_LEN:] * window)


def test_filterbank_geometry():
    bank = build_mel_filterbank()
    assert bank.weights.shape == (N_MELS, N_BINS)
    assert bank.band_edges.shape == (N_MELS + 2,)
    assert np.all(np.diff(bank.band_edges) > 0)
    assert bank.band_edges[0] == pytest.approx(FMIN_HZ)
    assert bank.band_edges[-1] == pytest.approx(FMAX_HZ)
    # every band peaks at exactly 1 after normalization
    np.testing.assert_allclose(bank.weights.max(axis=1), 1.0)
    centers = np.array([bank.center_hz(b) for b in range(N_MELS)])
    np.testing.assert_allclose(centers, bank.band_edges[1:-1])
    assert isinstance(default_filterbank(), MelFilterbank)


def test_filterbank_matches_reference():
    bank = build_mel_filterbank()
    np.testing.assert_allclose(bank.weights, ref_filterbank(), atol=1e-10)


def test_ablate_band_floors_one_band(rng):
    clip = _random_clip(rng)
    base = mfcc(clip).coeffs
    for band in (0, 17, 39):
        ablated = ablate_band(clip, band).coeffs
        assert ablated.shape == base.shape
        assert np.any(ablated != base)
    with pytest.raises(BadBandIndex):
        ablate_band(clip, 40)
    with pytest.raises(BadBandIndex):
        ablate_band(clip, -1)


def test_ablation_equals_manual_floor(rng):
    """Ablating band b must equal flooring that band's log energy."""
    from cryb.features import dct_coefficients, log_mel_energies

    clip = _random_clip(rng)
    band = 9
    log_e = log_mel_energies(clip)
    log_e[:, band] = np.log(LOG_FLOOR)
    want = dct_coefficients(log_e)
    got = ablate_band(clip, band).coeffs
    np.testing.assert_array_equal(got, want)


def test_cache_round_trip(tmp_path, rng):
    mat = mfcc(_random_clip(rng))
    path = tmp_path / "m.mfcc"
    write_cache(path, mat)
    back = read_cache(path)
    np.testing.assert_array_equal(back.coeffs,
                                  mat.coeffs.astype("<f4").astype(np.float64))


def test_cache_rejects_corruption(tmp_path, rng):
    mat = mfcc(_random_clip(rng))
    path = tmp_path / "m.mfcc"
    write_cache(path, mat)
    raw = bytearray(path.read_bytes())
    raw[0] ^= 0xFF
    path.write_bytes(bytes(raw))
    with pytest.raises(CorruptCheckpoint):
        read_cache(path)
    path.write_bytes(bytes(raw[:20]))
    with pytest.raises(CorruptCheckpoint):
        read_cache(path)


def test_mfcc_for_file_cache_agrees_with_direct(tmp_path, tiny_corpus,
                                                monkeypatch):
    wav = tiny_corpus.clip_path(tiny_corpus.rows[0])
    direct = mfcc_for_file(wav)
    cache = tmp_path / "cache"
    monkeypatch.setenv(CACHE_ENV_VAR, str(cache))
    first = mfcc_for_file(wav, cache_dir=cache)
    assert any(cache.rglob("*.mfcc")), "cache file should be created"
    second = mfcc_for_file(wav, cache_dir=cache)
    np.testing.assert_array_equal(first.coeffs, second.coeffs)
    np.testing.assert_array_equal(first.coeffs, direct.coeffs)
    assert os.environ[CACHE_ENV_VAR] == str(cache)
