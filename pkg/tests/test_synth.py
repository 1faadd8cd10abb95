"""Synthetic corpus generator: determinism, spec validation, manifests."""

import numpy as np
import pytest

from cryb.audio import read_wav
from cryb.errors import InvalidSpec
from cryb.synth import (CrySpec, Manifest, ManifestRow, derive_rng,
                        synth_corpus, synth_cry)


def _spec(**overrides):
    base = dict(f0_base=420.0, f0_slope=20.0, burst_count=3,
                burst_duration_s=0.15, amplitude=0.8, harmonic_rolloff=0.6,
                seed=7)
    base.update(overrides)
    return CrySpec(**base)


def test_derive_rng_streams_are_stable_and_distinct():
    a1 = derive_rng(5, "split").random(4)
    a2 = derive_rng(5, "split").random(4)
    b = derive_rng(5, "sampler").random(4)
    c = derive_rng(6, "split").random(4)
    np.testing.assert_array_equal(a1, a2)
    assert not np.array_equal(a1, b)
    assert not np.array_equal(a1, c)


def test_synth_cry_is_deterministic():
    clip1 = synth_cry(_spec())
    clip2 = synth_cry(_spec())
    np.testing.assert_array_equal(clip1.samples, clip2.samples)
    clip3 = synth_cry(_spec(seed=8))
    assert not np.array_equal(clip1.samples, clip3.samples)


def test_synth_cry_basic_shape_and_level():
    clip = synth_cry(_spec())
    assert len(clip) == 8000
    assert clip.sample_rate == 8000
    assert np.max(np.abs(clip.samples)) == pytest.approx(0.8, abs=1e-3)


def test_synth_cry_fundamental_is_audible():
    # flat pitch, long single burst: spectral peak should sit near f0
    spec = _spec(f0_base=400.0, f0_slope=0.0, burst_count=2,
                 burst_duration_s=0.3)
    clip = synth_cry(spec)
    spectrum = np.abs(np.fft.rfft(clip.samples.astype(np.float64)))
    freqs = np.fft.rfftfreq(len(clip), 1 / 8000)
    peak = freqs[np.argmax(spectrum)]
    assert abs(peak - 400.0) < 40.0


def test_synth_cry_respects_antialias_limit():
    # harmonics that would cross 3.9 kHz are dropped entirely
    spec = _spec(f0_base=1000.0, f0_slope=0.0)
    clip = synth_cry(spec)
    spectrum = np.abs(np.fft.rfft(clip.samples.astype(np.float64)))
    freqs = np.fft.rfftfreq(len(clip), 1 / 8000)
    high = spectrum[freqs > 3950]
    assert high.max() < 0.01 * spectrum.max()


def test_cry_spec_validation():
    with pytest.raises(InvalidSpec):
        _spec(f0_base=50.0).validate()
    with pytest.raises(InvalidSpec):
        _spec(amplitude=0.0).validate()
    with pytest.raises(InvalidSpec):
        _spec(amplitude=1.5).validate()
    with pytest.raises(InvalidSpec):
        _spec(burst_count=0).validate()
    with pytest.raises(InvalidSpec):
        _spec(burst_count=10, burst_duration_s=0.3).validate()
    with pytest.raises(InvalidSpec):
        _spec(harmonic_rolloff=1.0).validate()


def test_manifest_round_trip(tmp_path):
    rows = [ManifestRow(path=f"wavs/c{i}.wav", label="normal" if i % 2 else
                        "asphyxia", subject_id=f"s{i // 3}", split="")
            for i in range(9)]
    m = Manifest(rows=rows, root=tmp_path)
    m.save(tmp_path / "manifest.csv")
    back = Manifest.load(tmp_path / "manifest.csv")
    assert [r.path for r in back.rows] == [r.path for r in rows]
    assert back.class_names == ["asphyxia", "normal"]
    assert back.subject_ids == [f"s{i}" for i in range(3)]


def test_manifest_rejects_duplicates_and_bad_header(tmp_path):
    rows = [ManifestRow("a.wav", "x", "s0"), ManifestRow("a.wav", "y", "s1")]
    with pytest.raises(InvalidSpec):
        Manifest(rows=rows, root=tmp_path)
    bad = tmp_path / "bad.csv"
    bad.write_text("file,klass\na.wav,x\n")
    with pytest.raises(InvalidSpec):
        Manifest.load(bad)


def test_synth_corpus_layout(tmp_path):
    m = synth_corpus("target_cry", n_subjects=6, clips_per_subject=4,
                     class_count=2, seed=3, out_dir=tmp_path / "c")
    assert len(m.rows) == 24
    assert m.class_names == ["asphyxia", "normal"]
    labels_per_subject = {}
    for r in m.rows:
        labels_per_subject.setdefault(r.subject_id, set()).add(r.label)
    # each cry subject carries exactly one diagnosis
    assert all(len(s) == 1 for s in labels_per_subject.values())
    counts = {c: sum(r.label == c for r in m.rows) for c in m.class_names}
    assert counts["asphyxia"] == counts["normal"] == 12
    clip = read_wav(m.clip_path(m.rows[0]))
    assert len(clip) == 8000 and clip.sample_rate == 8000


def test_synth_corpus_deterministic(tmp_path):
    m1 = synth_corpus("target_cry", 4, 2, 2, 9, tmp_path / "a")
    m2 = synth_corpus("target_cry", 4, 2, 2, 9, tmp_path / "b")
    w1 = (tmp_path / "a" / m1.rows[0].path).read_bytes()
    w2 = (tmp_path / "b" / m2.rows[0].path).read_bytes()
    assert w1 == w2
    assert [r.label for r in m1.rows] == [r.label for r in m2.rows]


def test_synth_corpus_words_task(tmp_path):
    m = synth_corpus("words", n_subjects=8, clips_per_subject=8,
                     class_count=8, seed=1, out_dir=tmp_path / "w")
    assert len(m.class_names) == 8
    # every speaker records every word
    for sid in m.subject_ids:
        labels = {r.label for r in m.rows if r.subject_id == sid}
        assert len(labels) == 8


def test_synth_corpus_validates_arguments(tmp_path):
    with pytest.raises(InvalidSpec):
        synth_corpus("no_such_task", 4, 2, 2, 0, tmp_path / "x")
    with pytest.raises(InvalidSpec):
        synth_corpus("target_cry", 4, 2, 3, 0, tmp_path / "y")
    with pytest.raises(InvalidSpec):
        synth_corpus("speakers", 4, 2, 5, 0, tmp_path / "z")
    with pytest.raises(InvalidSpec):
        synth_corpus("words", 4, 8, 8, 0, tmp_path / "v")


def test_class_conditional_f0_separation(tmp_path):
    """Asphyxia clips must center on higher fundamentals than normal ones."""
    m = synth_corpus("target_cry", n_subjects=52, clips_per_subject=2,
                     class_count=2, seed=21, out_dir=tmp_path / "sep")
    by_class = {"normal": [], "asphyxia": []}
    for r in m.rows:
        clip = read_wav(m.clip_path(r))
        spectrum = np.abs(np.fft.rfft(clip.samples.astype(np.float64)))
        freqs = np.fft.rfftfreq(len(clip), 1 / 8000)
        by_class[r.label].append(freqs[np.argmax(spectrum)])
    assert len(by_class["normal"]) >= 50
    assert len(by_class["asphyxia"]) >= 50
    assert np.mean(by_class["asphyxia"]) > np.mean(by_class["normal"])
